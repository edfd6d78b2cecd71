"""
Pydantic models for aple_core estimator and experiment configuration.
"""
from typing import List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _split_csv(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class AoaEstimatorConfig(BaseModel):
    """
    Configuration of the per-subarray AoA posterior estimator.
    """

    model_config = ConfigDict(extra="forbid")

    pad_factor: int = Field(
        default=4,
        ge=1,
        description="Zero-padding factor of the coarse periodogram over the valid AoA range.",
    )
    newton_cap: int = Field(
        default=50, ge=1, description="Maximum Newton refinement steps."
    )
    step_tol: float = Field(
        default=1e-12, gt=0, description="Newton stops when the step norm falls below this."
    )
    grad_tol: float = Field(
        default=1e-10,
        gt=0,
        description="Newton stops when the gradient norm falls below this times max(1, ||H||).",
    )
    gain_prior_scale: float = Field(
        default=1e6,
        gt=0,
        description="Gain prior variance as a multiple of the per-antenna signal power.",
    )
    relative_variance_floor: float = Field(
        default=1e-12,
        gt=0,
        description="Lower bound of the likelihood variance relative to the per-antenna power.",
    )


class FusionConfig(BaseModel):
    """
    Configuration of the location belief maximization and feedback messages.
    """

    model_config = ConfigDict(extra="forbid")

    max_iter: int = Field(default=500, ge=1, description="Maximum ascent iterations.")
    grad_tol: float = Field(
        default=1e-9,
        gt=0,
        description="Ascent stops when the gradient norm is below this times max(1, sum of kappa).",
    )
    step_tol: float = Field(
        default=1e-12, gt=0, description="Ascent stops when the step is shorter than this (m)."
    )
    hessian_floor: float = Field(
        default=1e-8,
        gt=0,
        description="Eigenvalue floor of the negative Hessian before inversion (m^-2).",
    )
    kappa_cap: float = Field(
        default=1e10, gt=0, description="Upper bound on feedback message concentration."
    )
    divergence_factor: float = Field(
        default=100.0,
        gt=1,
        description="Ascent is abandoned when ||p|| exceeds this times the scene scale.",
    )
    init_angles: int = Field(
        default=20, ge=2, description="Direction-cosine grid points per axis of the initializer."
    )
    init_ranges: int = Field(
        default=20, ge=2, description="Log-spaced range points of the initializer."
    )
    init_r_min: Optional[float] = Field(
        default=None, gt=0, description="Smallest initializer range (m). Defaults to R_N / 2."
    )
    init_r_max: Optional[float] = Field(
        default=None, gt=0, description="Largest initializer range (m). Defaults to 2 R_F."
    )
    init_max_sine: float = Field(
        default=0.95,
        gt=0,
        lt=1,
        description="Largest sine of the off-boresight angle covered by the initializer.",
    )
    init_candidates: int = Field(
        default=4, ge=1, description="Best grid points used as ascent starting points."
    )


class ApleConfig(BaseModel):
    """
    Configuration of the APLE outer loop.
    """

    model_config = ConfigDict(extra="forbid")

    n1: int = Field(default=5, ge=1, description="Outer message-passing iterations.")
    damping: float = Field(
        default=0.5,
        ge=0.0,
        lt=1.0,
        description="Weight of the previous feedback message when updating it (0 disables).",
    )
    location_tol: float = Field(
        default=1e-6,
        ge=0,
        description="Early exit when successive location estimates move less than this (m). "
        "0 always runs n1 iterations.",
    )
    workers: int = Field(
        default=1, ge=1, description="Threads for the per-subarray and per-message stages."
    )
    estimator: AoaEstimatorConfig = Field(default_factory=AoaEstimatorConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)


class GridConfig(BaseModel):
    """
    Polar search grid of the baseline estimators.
    """

    model_config = ConfigDict(extra="forbid")

    r_step: float = Field(default=0.1, gt=0, description="Range resolution (m).")
    angle_step_deg: float = Field(
        default=0.02, gt=0, description="Azimuth and elevation resolution (degrees)."
    )
    half_cells_r: int = Field(
        default=5, ge=0, description="Range cells on each side of the reference point."
    )
    half_cells_angle: int = Field(
        default=10, ge=0, description="Angle cells on each side of the reference point."
    )
    random_window: bool = Field(
        default=True,
        description="Shift the window by a random whole number of cells per axis so the "
        "reference can sit anywhere inside it, not only at its center.",
    )
    chunk_size: int = Field(
        default=512, ge=1, description="Grid points evaluated per block."
    )


class ExperimentConfig(BaseModel):
    """
    A Monte Carlo sweep: array, partitions, user placement, SNRs and estimators.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="experiment", description="Label of the sweep.")
    n_x: int = Field(ge=1, description="Antennas along x.")
    n_y: Optional[int] = Field(
        default=None, ge=1, description="Antennas along y. Defaults to n_x."
    )
    d_over_lambda: float = Field(
        default=0.5, gt=0, description="Antenna spacing in wavelengths."
    )
    frequency_hz: float = Field(default=28e9, gt=0, description="Carrier frequency.")
    allow_even: bool = Field(
        default=True, description="Accept even antenna counts (half-integer index set)."
    )
    partitions: List[Tuple[int, int]] = Field(
        default_factory=lambda: [(3, 3)], description="Partition grids (m_x, m_y)."
    )
    p_user: Optional[List[float]] = Field(
        default=None, description="Explicit user location; overrides r_values."
    )
    r_values: List[float] = Field(
        default_factory=lambda: [2.0], description="User ranges to sweep."
    )
    r_unit: Literal["m", "fraunhofer", "sub_fraunhofer"] = Field(
        default="m",
        description="Unit of r_values: meters, or multiples of R_F or R_m,F.",
    )
    cone_half_angle_deg: float = Field(
        default=30.0,
        ge=0,
        lt=90,
        description="Half-angle of the boresight cone user directions are drawn from.",
    )
    snr_db: List[float] = Field(
        default_factory=lambda: [20.0], description="Per-antenna SNRs (dB)."
    )
    noiseless: bool = Field(
        default=False, description="Force sigma^2 = 0 regardless of snr_db."
    )
    trials: int = Field(default=1, ge=1, description="Monte Carlo trials per cell.")
    seed: int = Field(default=0, ge=0, description="Master seed.")
    estimators: List[Literal["aple", "mle", "omp"]] = Field(
        default_factory=lambda: ["aple"], description="Estimators to run."
    )
    record_timing: bool = Field(
        default=True, description="Record wall time; false writes zeros for reproducible CSVs."
    )
    threads: Optional[int] = Field(
        default=None, ge=1, description="Trial workers. Defaults to the process config."
    )
    sizes: List[int] = Field(
        default_factory=list,
        description="Antennas per side of square arrays; replaces n_x and n_y when set.",
    )
    runs: int = Field(default=5, ge=1, description="Timed runs per size of the scaling command.")
    output: Optional[str] = Field(default=None, description="CSV output path.")
    aple: ApleConfig = Field(default_factory=ApleConfig)
    grid: GridConfig = Field(default_factory=GridConfig)

    @field_validator("snr_db", "r_values", "estimators", "p_user", "sizes", mode="before")
    @classmethod
    def _parse_lists(cls, value):
        return _split_csv(value)

    @field_validator("partitions", mode="before")
    @classmethod
    def _parse_partitions(cls, value):
        value = _split_csv(value)
        if isinstance(value, list):
            return [
                tuple(int(part) for part in item.lower().split("x"))
                if isinstance(item, str)
                else item
                for item in value
            ]
        return value

    @field_validator("p_user")
    @classmethod
    def _check_p_user(cls, value):
        if value is not None and len(value) != 3:
            raise ValueError("p_user needs three coordinates.")
        return value

    @model_validator(mode="after")
    def _check_size_partitions(self):
        if self.sizes and len(self.partitions) not in (1, len(self.sizes)):
            raise ValueError(
                f"{len(self.sizes)} sizes need one partition each or a single shared one, "
                f"got {len(self.partitions)}."
            )
        return self

    @property
    def ny(self) -> int:
        return self.n_y if self.n_y is not None else self.n_x

    def arrays(
        self, sizes: Optional[Sequence[int]] = None
    ) -> List[Tuple[int, int, List[Tuple[int, int]]]]:
        """
        Arrays of the sweep as (n_x, n_y, partitions).

        Without sizes this is the single n_x by n_y array with every partition.
        With sizes each square array gets the partition at the same position, or
        the only partition when one is given.

        Raises:
            ValueError: If the partition count matches neither 1 nor the size count.
        """
        sizes = list(self.sizes if sizes is None else sizes)
        if not sizes:
            return [(self.n_x, self.ny, list(self.partitions))]
        if len(self.partitions) == len(sizes):
            partitions = list(self.partitions)
        elif len(self.partitions) == 1:
            partitions = list(self.partitions) * len(sizes)
        else:
            raise ValueError(
                f"{len(sizes)} sizes need one partition each or a single shared one, "
                f"got {len(self.partitions)}."
            )
        return [(n, n, [pair]) for n, pair in zip(sizes, partitions)]


class SceneConfig(BaseModel):
    """
    A single scene for the `locate` command.
    """

    model_config = ConfigDict(extra="forbid")

    n_x: int = Field(ge=1)
    n_y: Optional[int] = Field(default=None, ge=1)
    d_over_lambda: float = Field(default=0.5, gt=0)
    frequency_hz: float = Field(default=28e9, gt=0)
    allow_even: bool = Field(default=True)
    m_x: int = Field(default=3, ge=1)
    m_y: Optional[int] = Field(default=None, ge=1)
    p_user: List[float] = Field(description="User location (m).")
    snr_db: Optional[float] = Field(
        default=None, description="Per-antenna SNR; omitted means noiseless."
    )
    seed: int = Field(default=0, ge=0)
    aple: ApleConfig = Field(default_factory=ApleConfig)

    @field_validator("p_user", mode="before")
    @classmethod
    def _parse_p_user(cls, value):
        value = _split_csv(value)
        if isinstance(value, list) and len(value) != 3:
            raise ValueError("p_user needs three coordinates.")
        return value
