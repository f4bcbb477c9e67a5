"""A tour of the tensor layer: graphs, backward, and a hand-rolled fit.

Everything downstream (attention, convolutions, the training loop)
stands on the few rules shown here, so this is the place to convince
yourself the bookkeeping is right before trusting anything bigger.
"""

import numpy as np

from crowdloc import tensor as T
from crowdloc.tensor import ConvSpec, Tensor, tsum
from crowdloc.train import AdamW, param_groups

print("=" * 64)
print("1. a tiny graph, differentiated by hand and by backward()")
print("=" * 64)

# f(a, b) = sum(sigmoid(a @ b)); df/db has a closed form we can eyeball
a = Tensor(np.array([[1.0, -2.0], [0.5, 0.25]], dtype=np.float32))
b = Tensor(np.array([[0.3], [-0.1]], dtype=np.float32), requires_grad=True)
y = T.sigmoid(T.matmul(a, b))
tsum(y).backward()

s = 1.0 / (1.0 + np.exp(-(a.data @ b.data)))
by_hand = a.data.T @ (s * (1.0 - s))
print("backward():\n", b.grad)
print("chain rule by hand:\n", by_hand)
print("max abs difference:", float(np.abs(b.grad - by_hand).max()))

print()
print("=" * 64)
print("2. gradients accumulate when a leaf is used twice")
print("=" * 64)

x = Tensor(np.array([2.0, 3.0], dtype=np.float32), requires_grad=True)
tsum(x * x + x).backward()  # d/dx (x^2 + x) = 2x + 1
print("grad of sum(x*x + x) at [2, 3]:", x.grad, "(expected [5, 7])")

print()
print("=" * 64)
print("3. dilation widens a kernel without adding weights")
print("=" * 64)

for d in (1, 2, 3, 5):
    spec = ConvSpec(kernel=(3, 3), dilation=(d, d))
    print(f"3x3 kernel, dilation {d}: span {spec.span()[0]}x{spec.span()[1]}")

print()
print("=" * 64)
print("4. fitting a line with the same optimizer the trainer uses")
print("=" * 64)

rng = np.random.default_rng(0)
xs = rng.uniform(-1, 1, (64, 1)).astype(np.float32)
ys = 3.0 * xs - 0.7 + rng.normal(0, 0.05, xs.shape).astype(np.float32)

w = Tensor(np.zeros((1, 1), dtype=np.float32), requires_grad=True)
c = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
opt = AdamW({"fit": {"params": {"w": w, "c": c}}}, weight_decay=0.0)

for step in range(400):
    opt.zero_grad()
    pred = T.matmul(Tensor(xs), w) + c
    diff = pred - Tensor(ys)
    loss = T.mean(diff * diff)
    loss.backward()
    opt.step({"fit": 0.05})
    if step % 100 == 0 or step == 399:
        print(f"step {step:3d}  loss {loss.data.item():.5f}  "
              f"w {w.data.item():+.3f}  c {c.data.item():+.3f}")

print("target was w +3.000  c -0.700")

print()
print("=" * 64)
print("5. the trainer's two-group split, on a real model")
print("=" * 64)

# context blocks train ten times slower than the rest; param_groups is
# how the optimizer knows which tensors those are
from crowdloc.model import CrowdLocalizer, ModelConfig

model = CrowdLocalizer(ModelConfig.toy(img=32), np.random.default_rng(1))
groups = param_groups(model)
for name, group in groups.items():
    params = group["params"]
    count = sum(int(np.prod(p.data.shape)) for p in params.values())
    print(f"group {name!r}: {len(params)} tensors, {count} scalars")
