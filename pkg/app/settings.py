from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", env_prefix="BENCH_"
    )

    # BENCH_SEED overrides the seed stored in a scenario file
    seed: int | None = None
    log_level: str = "INFO"

    # Map building
    voxel_size: float = 0.05
    max_voxels: int = 20_000_000
    # Heightmap builds are voxels x triangles brute force
    max_bruteforce_pairs: int = 400_000_000
    gradient_degenerate_norm: float = 0.1
    # Built maps a process keeps in memory
    max_cached_maps: int = 4

    # Robot sampling
    candidate_spacing: float = 0.03

    # Settling
    epsilon: float = 0.01
    step_decay: float = 0.9
    max_fall_iters: int = 100
    max_rot_iters_per_axis: int = 50
    max_rotation_stages: int = 25
    axis_membership_tol: float = 1e-4
    contact_merge_radius: float = 0.01

    # Oracle grid
    oracle_z_step: float = 0.005
    oracle_angle_step_deg: float = 0.25
    oracle_angle_range_deg: float = 30.0
    oracle_penetration_tol: float = 0.002

    # Synthetic path sampling
    path_spacing: float = 0.05


settings = Settings(_env_file=".env", _env_file_encoding="utf-8")
