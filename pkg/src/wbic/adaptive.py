"""Direct adaptive force law for contact with an unknown impedance.

The commanded scalar force combines a feedforward built from the current
impedance estimate with a sliding-error feedback term; the estimate adapts
along the regressor so that a quadratic energy of the tracking and
parameter errors never increases. The controller that hosts this law turns
the scalar into a planar force along the contact direction.
"""

from __future__ import annotations

import numpy as np


class AdaptiveForceLaw:
    """Model-reference adaptation of a 1-D contact force.

    The contact coordinate x is assumed to obey
    lambda = m xdd + b xd + k (x - x0) + f_s with unknown coefficients
    pi = (m, b, k, f_s). With sliding variable sigma = (xd_d - xd)
    + slope (x_d - x) and reference rates shifted the same way, the law

        lambda = Y . pi_hat + k_s sigma,   pi_hat' = Y sigma / gains

    keeps V = m sigma^2 / 2 + slope k_s e^2 + pi~ . gains pi~ / 2
    non-increasing along the true dynamics, for any positive gains.
    """

    def __init__(
        self,
        slope: float = 4.0,
        k_s: float = 80.0,
        gains=(0.5, 0.5, 0.5, 0.02),
        pi0=(0.0, 0.0, 0.0, 0.0),
    ):
        if slope <= 0.0 or k_s <= 0.0:
            raise ValueError("slope and k_s must be positive")
        self.slope = float(slope)
        self.k_s = float(k_s)
        self.gains = np.asarray(gains, dtype=float).copy()
        if self.gains.shape != (4,) or np.any(self.gains <= 0.0):
            raise ValueError("gains must be four positive entries")
        self.pi = np.asarray(pi0, dtype=float).copy()
        if self.pi.shape != (4,):
            raise ValueError("pi0 must have four entries (m, b, k, f_s)")
        self.sigma = 0.0
        self.regressor = np.zeros(4)

    def reset(self, pi0=None) -> None:
        if pi0 is not None:
            self.pi = np.asarray(pi0, dtype=float).copy()
        self.sigma = 0.0
        self.regressor = np.zeros(4)

    def force(
        self,
        x: float,
        xd: float,
        x_des: float,
        xd_des: float,
        xdd_des: float,
        x0: float,
        dt: float,
    ) -> float:
        """Advance the estimate one step and return the force command."""
        e = x_des - x
        ed = xd_des - xd
        sigma = ed + self.slope * e
        xd_r = xd_des + self.slope * e
        xdd_r = xdd_des + self.slope * ed
        Y = np.array([xdd_r, xd_r, x - x0, 1.0])
        lam = float(Y @ self.pi) + self.k_s * sigma
        self.pi = self.pi + dt * (Y * sigma) / self.gains
        self.sigma = sigma
        self.regressor = Y
        return lam

    def lyapunov(self, pi_true, e: float, sigma: float) -> float:
        """Energy of the current tracking and parameter errors."""
        pi_true = np.asarray(pi_true, dtype=float)
        err = self.pi - pi_true
        return float(
            0.5 * pi_true[0] * sigma * sigma
            + self.slope * self.k_s * e * e
            + 0.5 * err @ (self.gains * err)
        )
