"""Shared oracles for the test suite.

The finite-difference machinery runs in float64 so the comparison against
analytic gradients isolates formula errors from float32 roundoff.
"""

import numpy as np

from atvc.tensor import Tensor

FD_H = 1e-3
FD_RTOL = 1e-3
FD_ATOL = 1e-5


def finite_difference(f, arrays, h=FD_H):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(*arrays)
            flat[i] = orig - h
            down = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build, arrays, rtol=FD_RTOL, atol=FD_ATOL):
    """Compare autograd gradients of ``build(*tensors)`` against central differences.

    ``build`` maps Tensors to a scalar Tensor; ``arrays`` are float64 numpy
    inputs. Gradients must satisfy |a - n| <= atol + rtol * |n| elementwise.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def scalar(*arrs):
        ts = [Tensor(a, dtype=np.float64) for a in arrs]
        return float(build(*ts).data)

    numeric = finite_difference(scalar, [a.copy() for a in arrays])
    for t, n in zip(tensors, numeric):
        a = t.grad if t.grad is not None else np.zeros_like(n)
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def conv2d_bruteforce(x, w, stride=1, padding=0):
    """Direct-summation 2-D convolution oracle, layout N,C,H,W / O,I,kh,kw."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        h, wd = h + 2 * padding, wd + 2 * padding
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    out = np.zeros((n, co, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    x[b, ci, i * stride + u, j * stride + v]
                                    * w[o, ci, u, v]
                                )
                    out[b, o, i, j] = acc
    return out


def adam_scalar_oracle(w0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Reference scalar Adam descent, written independently of the engine."""
    w, m, v = w0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        w -= lr * mhat / (np.sqrt(vhat) + eps)
    return w
