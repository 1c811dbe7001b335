"""Synthetic cross-view benchmark generator.

Each sample has a latent code drawn around one of C cluster prototypes.
The ground (query) rendering sees only the shared latent dimensions; the
aerial (reference) rendering sees all of them, so a configured subset of
the code is recoverable from the aerial view alone. Renderings are fixed
seeded linear maps plus per-sample pixel noise, squashed into [0, 1] and
written as 8-bit pixmaps. GPS positions sit on a per-cluster grid whose
cluster spacing scales with the sample spacing, so wrong-cluster
retrievals are far while near-misses inside a cluster stay close.

Everything is a pure function of the seed: regenerating with the same
arguments reproduces byte-identical files.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .manifest import Manifest, ManifestRow, save_manifest
from .pnm import quantize01, write_pnm
from .synthproxy import ProxyConfig, proxy_synthesize

M_PER_DEG_LAT = 111_194.926645  # pi/180 * 6371 km


@dataclass(frozen=True)
class SyntheticSpec:
    clusters: int = 3
    per_cluster: int = 100
    test_per_cluster: int = 20
    ground_hw: tuple[int, int] = (16, 64)
    aerial_hw: tuple[int, int] = (32, 32)
    shared_dims: int = 6
    complementary_dims: int = 10
    noise: float = 0.25
    view_jitter_ground: float = 0.2   # latent-space corruption of the ground view
    view_jitter_aerial: float = 0.0
    pixel_noise_ground: float = 0.10
    pixel_noise_aerial: float = 0.05
    sample_spacing_m: float = 10.0
    base_lat: float = 28.5
    base_lon: float = -81.4
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 2:
            raise ConfigError(f"need at least 2 clusters, got {self.clusters}")
        if self.per_cluster < 1 or self.test_per_cluster < 0:
            raise ConfigError("per-cluster counts must be positive")
        if self.shared_dims < 1 or self.complementary_dims < 0:
            raise ConfigError("latent split must have shared dims >= 1, complementary >= 0")
        if min(self.ground_hw) < 8 or min(self.aerial_hw) < 8:
            raise ConfigError("images must be at least 8 pixels on a side")

    @property
    def latent_dims(self) -> int:
        return self.shared_dims + self.complementary_dims


def _render_map(rng: np.random.Generator, latent: int, channels: int,
                hw: tuple[int, int]) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(latent), size=(channels * hw[0] * hw[1], latent))


def _render(codes: np.ndarray, mapping: np.ndarray, hw: tuple[int, int],
            pixel_noise: np.ndarray) -> np.ndarray:
    raw = codes @ mapping.T + pixel_noise
    img = 0.5 + 0.22 * raw
    return np.clip(img, 0.0, 1.0).reshape(codes.shape[0], 3, hw[0], hw[1])


def generate_synthetic_dataset(out_dir, spec: SyntheticSpec,
                               proxy: ProxyConfig | None = None) -> tuple[Path, Path]:
    """Write images plus train/test manifests; returns the manifest paths.

    When ``proxy`` is given, synthesized reference images are materialized
    alongside and recorded in the manifests' synth column.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(spec.seed)
    rng_proto, rng_maps, rng_latent, rng_pixel = (
        np.random.Generator(np.random.PCG64(s)) for s in root.spawn(4))

    c, l = spec.clusters, spec.latent_dims
    prototypes = rng_proto.normal(0.0, 1.0, size=(c, l))
    ground_map = _render_map(rng_maps, spec.shared_dims, 3, spec.ground_hw)
    aerial_map = _render_map(rng_maps, l, 3, spec.aerial_hw)

    per_split = {"train": spec.per_cluster, "test": spec.test_per_cluster}
    grid = int(np.ceil(np.sqrt(spec.per_cluster + spec.test_per_cluster)))
    spacing_deg = spec.sample_spacing_m / M_PER_DEG_LAT
    cluster_deg = spacing_deg * grid * c * 4.0

    manifest_paths: dict[str, Path] = {}
    for split, count in per_split.items():
        rows: list[ManifestRow] = []
        offset = 0 if split == "train" else spec.per_cluster
        for ci in range(c):
            codes = (prototypes[ci][None, :] +
                     spec.noise * rng_latent.normal(0.0, 1.0, size=(count, l)))
            gsize = 3 * spec.ground_hw[0] * spec.ground_hw[1]
            asize = 3 * spec.aerial_hw[0] * spec.aerial_hw[1]
            g_noise = spec.pixel_noise_ground * rng_pixel.normal(0.0, 1.0, size=(count, gsize))
            a_noise = spec.pixel_noise_aerial * rng_pixel.normal(0.0, 1.0, size=(count, asize))
            if spec.noise == 0.0:
                g_noise[...] = 0.0
                a_noise[...] = 0.0
            grounds = _render(codes[:, :spec.shared_dims], ground_map,
                              spec.ground_hw, g_noise)
            aerials = _render(codes, aerial_map, spec.aerial_hw, a_noise)
            for k in range(count):
                idx = offset + k
                sid = f"c{ci}s{idx:04d}"
                g_rel = f"images/{sid}_ground.ppm"
                a_rel = f"images/{sid}_aerial.ppm"
                write_pnm(out_dir / g_rel, grounds[k])
                write_pnm(out_dir / a_rel, aerials[k])
                synth_rel = None
                if proxy is not None:
                    synth = proxy_synthesize(quantize01(grounds[k]),
                                             quantize01(aerials[k]), proxy)
                    synth_rel = f"images/{sid}_synth.ppm"
                    write_pnm(out_dir / synth_rel, synth)
                row, col = divmod(idx, grid)
                lat = spec.base_lat + ci * cluster_deg + row * spacing_deg
                lon = spec.base_lon + col * spacing_deg
                rows.append(ManifestRow(sid, g_rel, a_rel, synth_rel, lat, lon))
        manifest = Manifest(rows, out_dir, split)
        mpath = out_dir / f"{split}.csv"
        save_manifest(mpath, manifest)
        manifest_paths[split] = mpath
    return manifest_paths["train"], manifest_paths["test"]
