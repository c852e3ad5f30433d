"""Whole-body MPC interaction control with adaptive extensions.

Library layout:

- :mod:`wbic.model` — planar rigid-body robot (dynamics, kinematics)
- :mod:`wbic.environment` — linear-impedance environments and 1-D projection
- :mod:`wbic.traj` — time-optimal trapezoidal references, door estimation targets
- :mod:`wbic.mpc` — SLQ solver, soft constraints, receding-horizon controller
- :mod:`wbic.estimation` — momentum observer, force extraction, impedance KF, door EKF
- :mod:`wbic.adaptive` — model-reference adaptation law for interaction forces
- :mod:`wbic.sim` — coupled robot/environment simulation and episode runner
- :mod:`wbic.bench` — benchmark matrix, metrics, reports and figures
"""

__version__ = "0.1.0"

from . import model  # noqa: F401
