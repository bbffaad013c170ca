"""
Choosing the modality weights
=============================

When one modality has many more units than another, its distances spread
differently. The search below starts from inverse-IQR weights and scores a
small multiplicative grid by held-out weighted R^2.
"""

import numpy as np

from modex import (AlphaSearchConfig, BlackBoxSession, KernelConfig, TargetSelector,
                   build_instance_spec, build_local_dataset, make_synthetic, select_alpha)

spec = build_instance_spec(["pixels", "tokens"], [24, 3])

# only the tokens matter, and jointly: output is 1 when all three are present
model = make_synthetic("group_and", spec, modality="tokens")
session = BlackBoxSession(model, spec)
data = build_local_dataset(spec, session, TargetSelector(), n=800, seed=1)

alpha, diag = select_alpha(data, spec, AlphaSearchConfig(), kernel=KernelConfig())
print("base weights:", np.round(diag["alpha_base"], 3))
print("selected:    ", np.round(alpha, 3))

# the whole landscape; "penalized" candidates put too little weight on held-out rows
for c in sorted(diag["candidates"], key=lambda c: -c["J"])[:5]:
    print(np.round(c["alpha"], 3), f"WR2={c['wr2']:.4f} Neff={c['neff']:.1f} J={c['J']:.4f}")
