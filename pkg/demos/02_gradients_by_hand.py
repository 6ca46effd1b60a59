"""
The autodiff engine, checked against finite differences
========================================================

Every layer of the network is a recorded operation with a vector-Jacobian
product. Here we build a few graphs by hand, back-propagate, and compare with
central differences.
"""

import numpy as np

import hsic.autodiff as ad
from hsic.loss import SmoothingParams, cross_entropy, smooth_targets
from hsic.model import build_default_arch, infer_shapes
from hsic.selftest import model_gradcheck, narrow_arch

# a valid 3-D cross-correlation: 5x5x7 ones over 15x15x15 ones gives 175 everywhere
x = ad.Tensor(np.ones((1, 15, 15, 15, 1)))
k = ad.Tensor(np.ones((1, 5, 5, 7, 1)))
out = ad.conv3d(x, k, ad.Tensor(np.zeros(1)))
print("conv3d", out.shape, "unique values", np.unique(out.values))

# sum(relu(x)) at x = [-1, 2] has gradient [0, 1]
v = ad.Tensor(np.array([-1.0, 2.0]), requires_grad=True)
ad.backward(ad.tensor_sum(ad.relu(v)))
print("relu grad", v.grad)

# softmax followed by the smoothed cross-entropy: the logit gradient is q - p
z = ad.Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
p = smooth_targets([1, 4, 2], SmoothingParams(0.1, 4))
q = ad.softmax(z)
ad.backward(cross_entropy(q, p))
print("max |grad - (q - p)|", np.abs(z.grad - (q.values - p)).max())

# per-op finite-difference checks (64-bit, step 1e-4 * max(1, |x|))
for name, fn, shapes in [
    ("dense", lambda a, w, b: ad.dense(a, w, b), [(4, 3), (3, 5), (5,)]),
    ("conv3d", lambda a, w, b: ad.conv3d(a, w, b), [(1, 4, 4, 4, 1), (2, 2, 2, 2, 1), (2,)]),
    ("conv2d", lambda a, w, b: ad.conv2d(a, w, b), [(2, 5, 4, 3), (2, 3, 2, 3), (2,)]),
]:
    rep = ad.gradcheck(fn, shapes, seed=1)
    print(f"{name:7s} max rel err {rep.worst:.1e}  {'pass' if rep.passed else 'FAIL'}")

# the shape trace of the default network
for s in infer_shapes(build_default_arch(16)):
    print("  ", "x".join(map(str, s)))

# whole-model check on a two-filter copy of the default geometry
rep = model_gradcheck(narrow_arch(), seed=0)
print(f"narrow model: {sum(rep.checked)} entries, max rel err {rep.worst:.1e}, "
      f"{sum(rep.reduced_steps)} entries needed a smaller step near a ReLU kink")

# a 1% corrupted conv3d gradient is caught
with ad.corrupted_gradient("conv3d", 1.01):
    rep = ad.gradcheck(lambda a, w, b: ad.conv3d(a, w, b), [(1, 4, 4, 4, 1), (2, 2, 2, 2, 1), (2,)])
print("corrupted conv3d detected:", not rep.passed)
