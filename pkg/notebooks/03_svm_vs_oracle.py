"""
Checking the SMO solver against a dense QP
==========================================

The soft-margin dual is small enough here to solve with accelerated
projected gradient, which gives an independent reference for the
objective and for the predictions.
"""

import sys
from pathlib import Path

import numpy as np

from mtbi_dmri import SvmConfig, decision_value, train_svm
from mtbi_dmri.svm import dual_objective, kernel_matrix

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import qp_dual  # noqa: E402

rng = np.random.default_rng(0)
X = np.vstack([rng.normal(-0.8, 1, (10, 2)), rng.normal(0.8, 1, (10, 2))])
y = np.r_[np.ones(10), -np.ones(10)]

# %%
for kernel, gamma in (("linear", None), ("rbf", 0.5)):
    cfg = SvmConfig(C=1.0, kernel=kernel, gamma=gamma, standardize=False)
    model = train_svm(X, y, cfg)
    K = kernel_matrix(X, X, kernel, model.gamma)
    alpha, bias, obj = qp_dual(K, y, cfg.C)
    ours = dual_objective(model.alpha, y, K)
    print(f"{kernel:6s} SMO {ours:.10f}  QP {obj:.10f}  rel {abs(ours - obj) / abs(obj):.1e}")
    print(f"       bias {model.bias:+.5f} vs {bias:+.5f}, {int((model.alpha > 0).sum())} support vectors")

# %%
# Margin check on the training points: y f(x) >= 1 - tol unless alpha > 0.
yf = y * decision_value(model, X)
print("smallest margin among alpha == 0:", yf[model.alpha == 0].min().round(5))
