# %% [markdown]
# # Autodiff and transformer blocks
#
# The tape records every operation on tensors that require gradients.
# Here we differentiate a small attention block and compare against
# central differences.

# %%
import numpy as np

from agtfusion import autodiff as ad
from agtfusion.autodiff import Tape, Tensor
from agtfusion.nn import CbtBlockParams, cbt_forward, init_cbt_block

rng = np.random.default_rng(0)
raw = init_cbt_block(rng, d_model=8, d_ff=16)
x = rng.normal(size=(2, 8))

# %% [markdown]
# Forward pass: two tokens of width 8 through one pre-norm block.

# %%
params = {k: Tensor(v, requires_grad=True) for k, v in raw.items()}
block = CbtBlockParams.from_mapping(params, "", n_heads=2)
with Tape() as tape:
    y = cbt_forward(Tensor(x), block)
    loss = (y * y).sum()
    tape.backward(loss)
print("output shape", y.shape, "loss", round(loss.item(), 6))

# %% [markdown]
# Compare the tape gradient of the first feed-forward matrix with
# finite differences.

# %%
def loss_of(w1):
    p = {k: Tensor(v) for k, v in raw.items()}
    p["ff.w1"] = Tensor(w1)
    out = cbt_forward(Tensor(x), CbtBlockParams.from_mapping(p, "", n_heads=2))
    return (out * out).sum().item()


(numeric,) = ad.numerical_gradient(loss_of, [raw["ff.w1"]])
err = ad.max_relative_error([params["ff.w1"].grad], [numeric])
print(f"max relative error {err:.2e}")
