"""Gaussian-RBF KAN scatter correction for cone-beam CT.

Submodules:
  autodiff   - minimal tensor engine with hand-derived backward passes
  gkan       - Gaussian-RBF KAN layers and the two-path feature block
  net        - U-shaped scatter-fraction network
  physics    - phantoms, Klein-Nishina, Beer-Lambert projection, scatter model
  recon      - log transform, median denoise, FDK reconstruction, HU scaling
  train      - pairing, Adam training, correction, SKS baseline, checkpoints
  metrics    - PSNR / SSIM / RMSE and ROI statistics
  io         - tensor file format and run configuration
  cli        - command-line pipeline
  experiment - end-to-end desk-scale study
"""

__version__ = "0.1.0"
