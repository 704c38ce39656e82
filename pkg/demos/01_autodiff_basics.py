"""Tour of the fp64 autodiff tape that everything else is built on.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from shapefuse import tensor as T
from shapefuse.gradcheck import check_gradients
from shapefuse.optim import SGD, init_param
from shapefuse.tensor import Tensor, backward

# Every value is a Tensor: an fp64 numpy buffer plus an optional gradient.
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
w = init_param("demo.weight", (2, 3), "gaussian", seed=0, sigma=0.5)
print("x:", x, "\nw:", w)

# Ops record themselves on a dynamic tape whenever a parameter is involved.
hidden = T.relu(T.matmul(x, w.value))
loss = T.mean(T.mul(hidden, hidden))
print("loss =", loss.item())

# backward() walks the tape in reverse and accumulates into w.grad.
backward(loss)
print("dL/dw:\n", w.value.grad)

# The analytic gradient agrees with central finite differences to 1e-4
# relative (that check certifies every module in the test suite).
worst = check_gradients(lambda: T.mean(T.mul(T.relu(T.matmul(x, w.value)),
                                             T.relu(T.matmul(x, w.value)))), [w])
print("worst finite-difference ratio (<= 1 passes):", round(worst, 4))

# SGD with momentum: v <- m*v + grad + wd*value; value <- value - lr*v.
opt = SGD([w], momentum=0.9, weight_decay=0.0)
for step in range(5):
    loss = T.mean(T.mul(T.relu(T.matmul(x, w.value)), T.relu(T.matmul(x, w.value))))
    backward(loss)
    opt.step(lr=0.05)
    print(f"step {step}: loss {loss.item():.6f}")
