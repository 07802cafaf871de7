"""qisp: control plane and physical-layer simulator for a switched
star-topology quantum network service.

Core building blocks live in submodules:

- ``topology``  — fiber plant, per-path optics, logical connectivity
- ``fabric``    — source/detector switch banks and routing state
- ``scheduler`` — reservation calendar, allocation/recovery ticks
- ``journal``   — append-only persistence and crash replay
- ``photonics`` — pair emission, transport, detection Monte Carlo
- ``analysis``  — coincidence histograms, Gaussian fits, dispersion sweep
- ``service``   — FastAPI HTTP layer (import separately)
- ``cli``       — command-line entry points (import separately)
"""

__version__ = "0.1.0"
