// Live status subscription: fetch-streamed server-sent events (the API
// needs an Authorization header, which EventSource cannot send), with a
// 2-second polling fallback whenever the stream drops.

import { authHeader, getStatus, streamUrl } from "./api";
import type { StatusFrame } from "./types";

export interface StreamHandle {
  stop(): void;
}

const POLL_INTERVAL_MS = 2000;

export function subscribeStatus(
  onFrame: (frame: StatusFrame) => void,
  onConnectionChange: (live: boolean) => void,
): StreamHandle {
  let stopped = false;
  let pollTimer: ReturnType<typeof setInterval> | null = null;

  function startPolling() {
    if (stopped || pollTimer !== null) return;
    pollTimer = setInterval(async () => {
      try {
        onFrame(await getStatus());
      } catch {
        onConnectionChange(false);
      }
    }, POLL_INTERVAL_MS);
  }

  function stopPolling() {
    if (pollTimer !== null) {
      clearInterval(pollTimer);
      pollTimer = null;
    }
  }

  async function consume() {
    while (!stopped) {
      try {
        const resp = await fetch(streamUrl(), { headers: authHeader() });
        if (!resp.ok || !resp.body) throw new Error(`HTTP ${resp.status}`);
        stopPolling();
        onConnectionChange(true);
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done || stopped) break;
          buffer += decoder.decode(value, { stream: true });
          let index;
          while ((index = buffer.indexOf("\n\n")) >= 0) {
            const chunk = buffer.slice(0, index);
            buffer = buffer.slice(index + 2);
            for (const line of chunk.split("\n")) {
              if (line.startsWith("data: ")) {
                onFrame(JSON.parse(line.slice(6)) as StatusFrame);
              }
            }
          }
        }
      } catch {
        // fall through to reconnect
      }
      if (!stopped) {
        onConnectionChange(false);
        startPolling();
        await new Promise((resolve) => setTimeout(resolve, 1000));
      }
    }
  }

  void consume();
  return {
    stop() {
      stopped = true;
      stopPolling();
    },
  };
}
