"""The reverse-mode engine, by hand and under finite differences.

Builds a few small expression graphs, backpropagates, and compares the
analytic gradients against central finite differences.  Ends by running
the packaged verification suite over every operator and loss.
"""

import time

import numpy as np

from voxseg import grad_check, run_gradient_suite
from voxseg import autodiff as ad


def main():
    # A scalar expression: f(a, b) = sum(sigmoid(a * b) + relu(a - 2)).
    a = ad.Tensor(np.array([[1.0, -0.5], [3.0, 0.2]]), requires_grad=True, name="a")
    b = ad.Tensor(np.array([[2.0, 1.0], [0.5, -1.0]]), name="b")
    f = ad.sum(ad.sigmoid(a * b) + ad.relu(a - 2.0))
    f.backward()

    s = 1.0 / (1.0 + np.exp(-a.data * b.data))
    expected = s * (1.0 - s) * b.data + (a.data > 2.0)
    print("f =", f.item())
    print("max |grad - hand-derived| =", np.abs(a.grad - expected).max())

    # Finite-difference check of a single 3-D convolution (same padding).
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.normal(size=(1, 2, 6, 6, 6)), requires_grad=True, name="x")
    w = ad.Tensor(rng.normal(size=(3, 2, 3, 3, 3), scale=0.3),
                  requires_grad=True, name="w")
    bias = ad.Tensor(rng.normal(size=(3,), scale=0.1), requires_grad=True, name="b")

    report = grad_check(lambda ts: ad.sum(ad.conv3d(ts[0], ts[1], ts[2])),
                        [x, w, bias], tol=1e-3, h=1e-4)
    print(f"\nconv3d grad check: passed={report.passed} "
          f"max_rel_err={report.max_rel_err:.2e}")

    # Downsample / upsample round trip used inside the U-Net.
    t = ad.Tensor(rng.normal(size=(1, 1, 4, 4, 4)))
    pooled = ad.max_pool2(t)
    up = ad.upsample2x(pooled)
    print("pool:", t.shape, "->", pooled.shape, "->", up.shape)

    # The packaged suite covers every operator and every loss in both
    # modes plus a small end-to-end network, 64-bit, central differences.
    t0 = time.time()
    suite = run_gradient_suite(seed=0)
    print(f"\nfull suite: {len(suite.entries)} checks, passed={suite.passed}, "
          f"worst rel err {suite.max_rel_err:.2e}, {time.time() - t0:.1f}s")
    for line in suite.summary().splitlines()[:6]:
        print("   ", line)
    print("    ...")


if __name__ == "__main__":
    main()
