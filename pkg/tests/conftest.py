import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from pcregen.config import preset
from pcregen.consistency import ConsistencyParams
from pcregen.geometry import RigidTransform
from pcregen.regeneration import IterationSchedule
from pcregen.synthetic import SceneSpec, generate_scene


def make_transform(rng, max_angle_deg=180.0, max_translation=1.0):
    """Random proper rigid transform"""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_angle_deg))
    translation = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(Rotation.from_rotvec(axis * angle).as_matrix(), translation)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_transform(rng):
    return lambda **kwargs: make_transform(rng, **kwargs)


@pytest.fixture
def clean_scene():
    """Noise-free, fully overlapping scene with half of G0 wrong"""
    spec = SceneSpec(
        point_count=400,
        overlap_fraction=1.0,
        noise_sigma=0.0,
        outlier_ratio=0.5,
        initial_pair_count=60,
        rng_seed=7,
    )
    return generate_scene(spec)


@pytest.fixture
def small_schedule():
    return IterationSchedule(
        k0=30, r0=0.3, s0=20, omega_k=1.0, omega_r=0.8, omega_s=1.0,
        iterations=2, s_min=5, global_hypotheses=16,
        params=ConsistencyParams(sigma=0.03, sigma_d=0.03, a=0.5),
    )


@pytest.fixture
def desk_config():
    return preset("desk")


def build_phi_region(rng, count, inlier_count, sigma=0.05, radius=0.5, noisy=True, partners=False):
    """
    Local region whose inlier consistencies dominate by construction

    Inliers (the seed pair at index 0 among them) carry target noise of at most
    sigma / 10. Each outlier target is pushed radially away from the seed
    target onto its own shell, four region radii apart, so no outlier is
    consistent with the seed, with an inlier or with another outlier.

    Returns:
        (P, Q, G, region, inlier mask of G, transform)
    """
    from pcregen.geometry import Correspondence, CorrespondenceSet, PointCloud
    from pcregen.regeneration import LocalRegion

    T = make_transform(rng)
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    source = directions * rng.uniform(0.05, radius, size=(count, 1))
    source[0] = 0.0
    exact = T.apply(source)
    seed_target = exact[0]

    target = exact.copy()
    if noisy:
        jitter = rng.normal(size=(count, 3))
        jitter /= np.linalg.norm(jitter, axis=1, keepdims=True)
        target += jitter * rng.uniform(0.0, sigma / 10.0, size=(count, 1))
        target[0] = seed_target
    shell_gap = 4.0 * radius
    for rank, k in enumerate(range(inlier_count, count)):
        outward = exact[k] - seed_target
        outward /= np.linalg.norm(outward)
        target[k] = exact[k] + shell_gap * (rank + 1) * outward

    if partners and inlier_count < count:
        target = np.vstack([target, exact[inlier_count:]])
    P = PointCloud(source)
    Q = PointCloud(target)
    G = CorrespondenceSet(np.column_stack([np.arange(count), np.arange(count)]))
    region = LocalRegion(
        index=0,
        seed=Correspondence(0, 0),
        source_indices=np.arange(count),
        target_indices=np.arange(len(Q)),
        target_support=np.arange(len(Q)),
    )
    mask = np.arange(count) < inlier_count
    return P, Q, G, region, mask, T


@pytest.fixture
def phi_region():
    return build_phi_region
