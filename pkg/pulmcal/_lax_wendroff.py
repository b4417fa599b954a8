"""
Numpy version of the Richtmyer two-step Lax-Wendroff update.

Same signature and results as the compiled ``_lax_wendroff_fast`` module,
which is used instead whenever it is built.
"""
import numpy as np


def richtmyer_step(A, Q, dt, dx, beta, chi, friction):
    """Advance the interior nodes of one vessel by ``dt``.

    Conservation form ``U = [A, Q]``, ``F = [Q, chi Q^2 / A + beta A^1.5]``,
    ``S = [0, -friction Q / A]``.

    Parameters
    ----------
    A, Q : ndarray, shape (n_nodes,)
        Area and flow at time ``t``.

    dt, dx : float
        Time step and node spacing.

    beta : float
        ``K / (3 rho sqrt(A_dia))``.

    chi : float
        Momentum-flux coefficient.

    friction : float
        Wall friction coefficient.

    Returns
    -------
    A_new, Q_new : ndarray, shape (n_nodes,)
        Values at ``t + dt``; the two end nodes are copied from the input and
        must be set by the boundary conditions.

    A_half, Q_half : ndarray, shape (n_nodes - 1,)
        Cell-centre values at ``t + dt / 2``.
    """
    flux_q = chi * Q * Q / A + beta * A * np.sqrt(A)
    source = -friction * Q / A

    A_half = 0.5 * (A[1:] + A[:-1]) - 0.5 * dt / dx * (Q[1:] - Q[:-1])
    Q_half = (
        0.5 * (Q[1:] + Q[:-1])
        - 0.5 * dt / dx * (flux_q[1:] - flux_q[:-1])
        + 0.25 * dt * (source[1:] + source[:-1])
    )

    flux_q_half = chi * Q_half * Q_half / A_half + beta * A_half * np.sqrt(A_half)
    source_half = -friction * Q_half / A_half

    A_new = A.copy()
    Q_new = Q.copy()
    A_new[1:-1] = A[1:-1] - dt / dx * (Q_half[1:] - Q_half[:-1])
    Q_new[1:-1] = (
        Q[1:-1]
        - dt / dx * (flux_q_half[1:] - flux_q_half[:-1])
        + 0.5 * dt * (source_half[1:] + source_half[:-1])
    )
    return A_new, Q_new, A_half, Q_half
