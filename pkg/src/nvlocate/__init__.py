"""nvlocate: simulated NV-sensor-array magnetometry and magnetic localisation.

Subsystem map:

- `fields`: dipole/bias sources, analytic fields, gradients, calibration
- `nvspin`: spin resonances and noiseless single/ensemble lineshapes
- `odmr`: photon-count spectra with deterministic Poisson shot noise
- `specfit`: smoothing, double-Gaussian fitting, log-feature extraction
- `sensitivity`: CW sensitivity formula and the position error budget
- `inverse`: convolutional regression network and least-squares oracle
- `tracking`: trajectories, continuous-time tracking, MPD metric
- `experiments`: scenario configs, study runners, and the CLI
"""

__version__ = "0.1.0"
