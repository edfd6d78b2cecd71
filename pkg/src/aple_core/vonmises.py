"""
Von Mises message algebra.

Messages are densities M(pi * theta; mu, kappa) over a direction cosine theta in
[-1, 1]; mu is stored in radians of the wrapped variable pi * theta. All
conversions between theta and pi * theta happen in this module.
"""
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.special import i0e

KAPPA_FLOOR = 1e-8


def wrap_angle(angle: float) -> float:
    """
    Wrap an angle into (-pi, pi].
    """
    return float(np.pi - np.mod(np.pi - angle, 2.0 * np.pi))


def log_i0(kappa):
    """
    log I_0(kappa) through the exponentially scaled Bessel function, finite for
    any kappa.
    """
    kappa = np.asarray(kappa, dtype=float)
    return np.log(i0e(kappa)) + kappa


@dataclass(frozen=True)
class VonMisesMsg:
    """
    Von Mises message with mean direction `mu` and concentration `kappa`.

    kappa = 0 is the uniform message; its mu is normalized to 0.
    """

    mu: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        kappa = float(self.kappa)
        if not kappa >= 0.0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}.")
        mu = 0.0 if kappa == 0.0 else wrap_angle(float(self.mu))
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls) -> "VonMisesMsg":
        return cls(mu=0.0, kappa=0.0)

    @classmethod
    def from_natural(cls, natural: complex) -> "VonMisesMsg":
        return cls(mu=float(np.angle(natural)), kappa=float(abs(natural)))

    @property
    def natural(self) -> complex:
        """kappa * exp(j mu)"""
        return self.kappa * np.exp(1j * self.mu)

    @property
    def mode_theta(self) -> float:
        return self.mu / np.pi


def vm_log_density(msg: VonMisesMsg, theta):
    """
    Log-density of M(pi * theta; mu, kappa).

    kappa cos(pi theta - mu) - log(2 pi I_0(kappa)), with I_0 evaluated in the log
    domain so that large kappa does not overflow.

    Args:
        msg (VonMisesMsg): The message.
        theta (float | np.ndarray): Direction cosine(s).

    Returns:
        float | np.ndarray: Log-density value(s).
    """
    theta = np.asarray(theta, dtype=float)
    value = msg.kappa * np.cos(np.pi * theta - msg.mu) - np.log(2.0 * np.pi) - log_i0(msg.kappa)
    return float(value) if value.ndim == 0 else value


def vm_combine(a: VonMisesMsg, b: VonMisesMsg, sign: int = 1) -> VonMisesMsg:
    """
    Product (sign=+1) or quotient (sign=-1) of two VM messages.

    kappa_e exp(j mu_e) = kappa_a exp(j mu_a) +/- kappa_b exp(j mu_b). A quotient
    whose concentration falls below KAPPA_FLOOR is clamped to the floor with the
    mean direction of the more concentrated operand.

    Args:
        a (VonMisesMsg): First operand.
        b (VonMisesMsg): Second operand.
        sign (int): +1 for a product, -1 for a quotient.

    Returns:
        VonMisesMsg: The combined message.
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}.")
    natural = a.natural + sign * b.natural
    if sign < 0 and abs(natural) < KAPPA_FLOOR:
        dominant = a if a.kappa >= b.kappa else b
        logger.debug(
            f"Clamped VM quotient (kappa {abs(natural):.3e} < {KAPPA_FLOOR:.0e})"
        )
        return VonMisesMsg(mu=dominant.mu, kappa=KAPPA_FLOOR)
    return VonMisesMsg.from_natural(natural)


def vm_from_laplace(mode_theta: float, neg_curvature: float) -> VonMisesMsg:
    """
    VM message matching a locally Gaussian log-density in theta.

    The VM log-density has second derivative -kappa pi^2 at its mode, so
    mu = pi * mode_theta and kappa = neg_curvature / pi^2.

    Args:
        mode_theta (float): Mode as a direction cosine.
        neg_curvature (float): Negative second derivative w.r.t. theta at the mode.

    Returns:
        VonMisesMsg: The matched message.

    Raises:
        ValueError: If the curvature is not positive.
    """
    if not neg_curvature > 0:
        raise ValueError(f"neg_curvature must be positive, got {neg_curvature}.")
    return VonMisesMsg(mu=np.pi * mode_theta, kappa=neg_curvature / np.pi**2)


def vm_fit_moments(angles: np.ndarray) -> VonMisesMsg:
    """
    Moment-matched VM fit to samples of pi * theta.

    Uses the circular mean and the piecewise approximation of the inverse of
    A_1(kappa) = I_1(kappa) / I_0(kappa).

    Args:
        angles (np.ndarray): Samples in radians.

    Returns:
        VonMisesMsg: The fitted message.
    """
    resultant = np.mean(np.exp(1j * np.asarray(angles, dtype=float)))
    length = min(float(abs(resultant)), 1.0 - 1e-15)
    if length < 0.53:
        kappa = 2 * length + length**3 + 5 * length**5 / 6
    elif length < 0.85:
        kappa = -0.4 + 1.39 * length + 0.43 / (1 - length)
    else:
        kappa = 1 / (length**3 - 4 * length**2 + 3 * length)
    return VonMisesMsg(mu=float(np.angle(resultant)), kappa=kappa)
