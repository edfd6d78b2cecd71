from typing import List

from pydantic import BaseModel, Field

RESULT_COLUMNS = [
    "estimator",
    "n_x",
    "m",
    "r",
    "snr_db",
    "trial",
    "err2",
    "pnorm2",
    "time_s",
    "converged",
]


class ResultRow(BaseModel):
    """
    One estimator run of one Monte Carlo trial.
    """

    estimator: str
    n_x: int
    m: int = Field(description="Number of subarrays.")
    r: float = Field(description="User range (m).")
    snr_db: float
    trial: int
    err2: float = Field(description="||p_hat - p_U||^2; NaN when the estimator failed.")
    pnorm2: float = Field(description="||p_U||^2.")
    time_s: float = Field(description="Estimator wall time; 0 when timing is disabled.")
    converged: bool


class LocateReport(BaseModel):
    """
    Output of the `locate` command.
    """

    p_hat: List[float]
    covariance_diagonal: List[float]
    iterations_run: int
    converged: bool
    ill_conditioned: bool
    p_user: List[float]
    error_m: float
