"""Run the scaled end-to-end study with a reduced configuration.

The same driver that backs the acceptance suite, shrunk (2 training
phantoms, 12 epochs) so it finishes in about a minute. The full-size
study uses the defaults: ``run_experiment(None)``.
"""

import numpy as np

from gkanct.experiment import run_experiment
from gkanct.io import load_run_config

cfg = load_run_config(None)
cfg["phantom"]["count_train"] = 2
cfg["geometry"]["n_views"] = 30
cfg["train"]["epochs"] = 12

res = run_experiment(cfg, log_every=200)

roi = res["roi"]
print(f"\nsoft-tissue ROI (reference {roi['reference']['mean']:.1f} HU):")
print(f"  uncorrected error: {roi['uncorrected']['error']:8.1f} HU")
print(f"  corrected error:   {roi['corrected']['error']:8.1f} HU")

rm = np.array(res["scatter_rmse_model"])
rs = np.array(res["scatter_rmse_sks"])
print(f"scatter-map RMSE, network vs baseline: {rm.mean():.0f} vs {rs.mean():.0f} photons "
      f"({(rm < rs).sum()}/{len(rm)} views better)")
print(f"volume PSNR: uncorrected {res['volume_psnr_uncorrected']:.2f} dB, "
      f"corrected {res['volume_psnr_corrected']:.2f} dB")
