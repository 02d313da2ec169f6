# %% [markdown]
# # Quickstart
#
# Random Fourier features, a two-layer kernel machine and its cross-fitted
# training loop on a small simulated problem.

# %%
import numpy as np

from mlkm import (Architecture, Network, Scenario, TrainConfig, adds_fit, gaussian, generate, kernel_eval,
                  make_fold_plan, mc_kernel_error, spectral_sample)

# %% [markdown]
# ## Features approximate the kernel
#
# The inner product of two feature vectors estimates the kernel value. The
# worst error over 100 random pairs shrinks as the number of features grows.

# %%
rng = np.random.default_rng(0)
pairs = [(rng.uniform(size=2), rng.uniform(size=2)) for _ in range(100)]
x, y = pairs[0]
print(f"K(x, y) = {kernel_eval(gaussian(1.0), x, y):.4f}")
for D in (50, 500, 5000):
    fm = spectral_sample(gaussian(1.0), 2, D, seed=0)
    print(f"D={D:5d}  phi(x).phi(y)={fm(x) @ fm(y):.4f}  max error={mc_kernel_error(gaussian(1.0), fm, pairs):.4f}")

# %% [markdown]
# ## Fit a 4-16-4-1 network

# %%
sc = Scenario("additive1", d=4, n=1000, seed=1)
train, test = generate(sc), generate(sc, 2000, "test")
arch = Architecture.from_string("4-16-4-1", scales=[0.4, 1.0])
net = Network.sample(arch, seed=1)
plan = make_fold_plan(train.n, arch.L, seed=1)
model = adds_fit(train, net, plan, TrainConfig(learning_rate=0.1, lr_decay=1e-3, patience=100, max_epochs=2000))
print(f"epochs={model.epochs} converged={model.converged}")
print(f"test MSE={np.mean((model.predict(test.X) - test.Y) ** 2):.3f} (noise variance 1.0)")

# %% [markdown]
# The prediction averages one submodel per fold rotation.

# %%
subs = model.submodel_predictions(test.X)
for j, pred in enumerate(subs):
    print(f"rotation {j}: test MSE={np.mean((pred - test.Y) ** 2):.3f}")
print(f"average:    test MSE={np.mean((subs.mean(axis=0) - test.Y) ** 2):.3f}")
