import numpy as np


def fd_grad(problem, x, h=1e-5):
    """Central finite-difference gradient of problem.full_loss at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (problem.full_loss(x + e) - problem.full_loss(x - e)) / (2.0 * h)
    return g


def long_gradient_descent(problem, x0=None, tol=1e-8, max_iter=500_000):
    """Full-gradient descent oracle at step 1/L until the gradient is tiny."""
    lip = problem.smoothness_hint()
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=np.float64)
    for _ in range(max_iter):
        g = problem.full_grad(x)
        if float(np.linalg.norm(g)) <= tol:
            break
        x = x - g / lip
    return x
