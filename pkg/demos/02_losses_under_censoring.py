"""
How the censoring-adjusted losses relate to one another
========================================================

Every loss in the package is, per observation and grid time, a quadratic
in the node value beta. This script builds the coefficient tables for a
small censored sample and checks a few relations between the losses.
"""

import numpy as np

from ciftree import PRESETS, FineGrayModel, TimeGrid, UnitCensoring, fit_aalen_johansen, fit_km
from ciftree.losses import node_estimate, observation_losses, precompute_stats
from ciftree.simulation import SimDesign, apply_censoring, sample_full

rng = np.random.default_rng(7)
design = SimDesign(PRESETS["medium"], n=300)
full = sample_full(design, rng)
data = apply_censoring(full, 1.2, rng)
grid = TimeGrid([0.25, 0.6, 1.2])
print(f"{data.n} subjects, {data.censoring_rate():.0%} censored")

# Kaplan-Meier for the censoring distribution; the event indicator is swapped.
cens = fit_km(data)
print(f"censoring survival drops to {cens.survival[-1]:.3f} by t = {cens.jump_times[-1]:.2f}")

# Two working models for the augmentation term: the true Fine-Gray CIF and
# the covariate-free Aalen-Johansen estimate.
fg = FineGrayModel(design.fg)
aj = fit_aalen_johansen(data)

# Node estimates for the whole sample under each loss. The censoring-adjusted
# estimates should sit close to the full-data answer computed from the
# uncensored times.
truth = precompute_stats(full, None, None, grid, kinds=["full"])
everyone = np.arange(data.n)
print("\nroot-node estimates of the cause-1 CIF")
print(f"{'full data':>12}: {np.round(node_estimate(truth, everyone, 'full').beta, 4)}")
for psi_name, psi in (("FG", fg), ("AJ", aj)):
    st = precompute_stats(data, cens, psi, grid)
    for kind in ("ipcw1", "ipcw2", "bj", "dr"):
        if kind in ("ipcw1", "ipcw2") and psi_name == "AJ":
            continue
        label = kind if kind.startswith("ipcw") else f"{kind}-{psi_name}"
        print(f"{label:>12}: {np.round(node_estimate(st, everyone, kind).beta, 4)}")
# At the root the covariate-free AJ working model adds no information beyond
# the weights, so BJ-AJ and DR-AJ reproduce the IPCW estimate there. They
# differ from it inside covariate-defined nodes.

# The doubly robust loss with the censoring survival set to one is exactly
# the Buckley-James loss.
unit = precompute_stats(data, UnitCensoring(), fg, grid)
beta = rng.random((data.n, grid.J))
gap = np.max(np.abs(observation_losses(unit, "dr", beta) - observation_losses(unit, "bj", beta)))
print(f"\nDR with unit censoring vs BJ: max per-observation gap {gap:.2e}")

# Inverse weights plus the martingale integral of the constant one sum to
# one for every subject. This is why the two forms of the DR node estimate
# agree.
st = precompute_stats(data, cens, fg, grid)
print(f"normalisation: max |TS0 - 1| = {np.max(np.abs(st.ts0_point + st.ts0_mart - 1)):.2e}")
