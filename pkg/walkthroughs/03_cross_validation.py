"""
A small cross-validation run
============================

Writes a 12-subject cohort, extracts features through the on-disk cache and
runs 3-fold subject-wise CV with a short epoch budget. Takes seconds on one
core; the full-size benchmark lives in the acceptance tests.

    python walkthroughs/03_cross_validation.py [out_dir]
"""

# %%
import sys
import tempfile
from pathlib import Path

from elpg.data_io import CohortConfig, generate_synthetic_cohort, load_cohort
from elpg.model import ModelConfig, Montage
from elpg.training import TrainConfig, cross_validate, format_results, wilcoxon_signed_rank

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="elpg-demo-"))
manifest = generate_synthetic_cohort(CohortConfig(n_per_class=6, n_channels=12, duration_sec=40.0), out)
print("cohort written to", manifest.parent)

# %% features are cached, so a second load is all hits
cohort = load_cohort(manifest, cache_dir=out / "cache")
again = load_cohort(manifest, cache_dir=out / "cache")
print(f"{len(cohort.subjects)} subjects, cache hits on reload: {again.cache_hits}")

# %% train
montage = Montage(cohort.layout.coords, cohort.parcellation)
model_cfg = ModelConfig(n_channels=12, hidden=32, head_hidden=32)
cfg = TrainConfig(folds=3, max_epochs=15, patience=5, batch_size=16)
report = cross_validate(cohort.subjects, cfg, model_cfg=model_cfg, montage=montage)
text, _ = format_results({"ELPG-DTFS": report})
print(text)

# %% per-fold accuracy against chance, paired by fold (too few folds for the exact test)
try:
    print("p =", wilcoxon_signed_rank(report.values("accuracy"), [0.5] * len(report.folds)))
except ValueError as exc:
    print("Wilcoxon skipped:", exc)
