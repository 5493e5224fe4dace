"""
Learning the missingness of non-disclosers
==========================================

Disclosing companies report almost everything; the others leave whole
blocks of features empty. A masker trained to minimise the MMD between
masked labeled rows and the unlabeled rows learns which blocks to hide,
and training on masked copies prepares the boosted model for that shift.
"""

# %%
# The default generator: energy data is 97% observed for disclosers but
# only 20% for everyone else.
import numpy as np

from ghgest import evaluation as ev
from ghgest import masker, synth
from ghgest.dataset import Dataset, grouped_kfold, split_train_valid_test
from ghgest.pipeline import PipelineConfig

cfg = synth.SynthConfig(seed=1)
labeled, unlabeled, _, _ = synth.generate(cfg)
train, valid, test = split_train_valid_test(labeled, grouped_kfold(labeled, 5, seed=1), 0)

# %%
# Fit the masker on the labeled training rows against the unlabeled pool.
mask_model = masker.fit_masker(Dataset.concat([train, valid]), unlabeled, seed=1)
masked = masker.apply_mask(mask_model, test, seed=99)

print(f"{'block':>12} {'labeled':>8} {'masked':>8} {'unlabeled':>9}")
for block in cfg.co_missing_blocks:
    j = labeled.schema.index(block.features[0])
    print(f"{block.name:>12} {test.mask[:, j].mean():8.2f} {masked.mask[:, j].mean():8.2f} "
          f"{unlabeled.mask[:, j].mean():9.2f}")

# %%
# Train with and without masked copies; score both on the masked test fold.
full = ev.run_fold(train, valid, test, unlabeled, ev.BenchmarkConfig(), 1, mask_model=mask_model)
plain = ev.run_fold(train, valid, test, unlabeled,
                    ev.BenchmarkConfig(pipeline=PipelineConfig(patterned_dropout=False)), 1,
                    mask_model=mask_model)
y = test.target
for name, res in (("with masked copies", full), ("without", plain)):
    d = res.distributions["Recalib", "masked"]
    print(f"{name:>19}: masked RMSE {ev.rmse(res.means['Recalib', 'masked'], y):8.0f}, "
          f"mean log-likelihood {np.mean(d.log_pdf(y)):.3f}")

# %%
# The baselines on the same rows, unmasked and masked.
for model in ev.RMSE_MODELS:
    u = ev.rmse(full.means[model, "unmasked"], y)
    m = ev.rmse(full.means[model, "masked"], y)
    print(f"{model:>9}: unmasked {u:8.0f}   masked {m:8.0f}")
