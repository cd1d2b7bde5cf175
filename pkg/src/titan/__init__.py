"""Grid-free deep-decoder image representations and experiment tooling.

Subpackages and modules:

- `titan.autodiff`: reverse-mode tape over float64 numpy arrays
- `titan.models`: the TITAN coordinate network, SIREN and deep decoder
- `titan.optim`: Adam, cosine schedule, linearized Bregman / AdaBreg
- `titan.operators`: Radon transform, noise, downsampling, coordinate grids
- `titan.metrics`: PSNR, SSIM, coordinate Jacobians, Lipschitz estimates
- `titan.harness`: experiment configs, runners, image/checkpoint I/O, CLI
"""

__version__ = "0.1.0"
