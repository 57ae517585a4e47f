import numpy as np

from mtglm import (MtObjective, PenaltySpec, RhoFunction, cached_table, detect_outliers,
                   example_path, fit_path, load_csv, sandwich_covariance)

data = load_csv(example_path())
print(data.columns, data.X.shape)

rho = RhoFunction("quartic", 2.0)
obj = MtObjective(data.X, data.y, cached_table(rho), rho)

# lasso path with BIC selection
path = fit_path(obj, PenaltySpec("lasso", 1.0), n_points=20)
fit = path.best("bic")
lam = path.lambdas[path.selected["bic"]]
print("selected lambda:", lam)
for name, b in zip(["(intercept)"] + data.columns, fit.beta):
    print(f"{name:12s} {b: .4f}")

# standard errors on the active set
obj_sel = MtObjective(data.X, data.y, obj.table, rho, PenaltySpec("lasso", lam))
se = sandwich_covariance(obj_sel, fit).standard_errors()
print("se:", np.round(se, 4))

# bootstrap outlier flags
rep = detect_outliers(data.X, data.y, fit.beta, B=20_000, seed=2)
print("bootstrap range:", round(rep.q1, 3), round(rep.q2, 3))
print("flagged rows:", rep.outliers)
