"""Dataset manifests: CSV rows pairing query and reference images.

Header: id,ground,aerial,synth,lat,lon. Paths are relative to the
manifest's directory. ``synth`` may be empty; lat/lon must be present for
every row or for none.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .pnm import read_pnm
from .retrieval import GeoSample

HEADER = ["id", "ground", "aerial", "synth", "lat", "lon"]


@dataclass
class ManifestRow:
    sample_id: str
    ground: str
    aerial: str
    synth: str | None = None
    latitude: float | None = None
    longitude: float | None = None


@dataclass
class Manifest:
    rows: list[ManifestRow]
    root: Path
    split: str | None = None

    def __len__(self):
        return len(self.rows)

    @property
    def has_geo(self) -> bool:
        return bool(self.rows) and self.rows[0].latitude is not None

    @property
    def has_synth(self) -> bool:
        return bool(self.rows) and all(r.synth for r in self.rows)

    def ids(self) -> list[str]:
        return [r.sample_id for r in self.rows]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def geo_samples(self) -> list[GeoSample]:
        if not self.has_geo:
            raise DataError("manifest has no geo information")
        return [GeoSample(r.sample_id, r.latitude, r.longitude) for r in self.rows]


def load_manifest(path, split: str | None = None, check_paths: bool = True) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    rows: list[ManifestRow] = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if header != HEADER:
            raise DataError(f"{path}: header must be {','.join(HEADER)}, got {','.join(header)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(rec)}")
            sid, ground, aerial, synth, lat, lon = (f.strip() for f in rec)
            if not sid or not ground or not aerial:
                raise DataError(f"{path}:{lineno}: id, ground and aerial are required")
            if sid in seen:
                raise DataError(
                    f"{path}: duplicate id {sid!r} on lines {seen[sid]} and {lineno}")
            seen[sid] = lineno
            if bool(lat) != bool(lon):
                raise DataError(f"{path}:{lineno}: latitude and longitude must come together")
            try:
                latitude = float(lat) if lat else None
                longitude = float(lon) if lon else None
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric coordinates") from None
            rows.append(ManifestRow(sid, ground, aerial, synth or None, latitude, longitude))
    if not rows:
        raise DataError(f"{path}: manifest has no data rows")
    with_geo = [r for r in rows if r.latitude is not None]
    if with_geo and len(with_geo) != len(rows):
        missing = next(r.sample_id for r in rows if r.latitude is None)
        raise DataError(
            f"{path}: geo coverage is partial ({len(with_geo)}/{len(rows)} rows; "
            f"first without geo: {missing!r})")
    manifest = Manifest(rows, path.parent, split)
    if check_paths:
        for r in rows:
            for rel in filter(None, (r.ground, r.aerial, r.synth)):
                if not (manifest.root / rel).exists():
                    raise DataError(f"{path}: missing image file {rel!r} (sample {r.sample_id!r})")
    return manifest


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in manifest.rows:
            lat = f"{r.latitude:.8f}" if r.latitude is not None else ""
            lon = f"{r.longitude:.8f}" if r.longitude is not None else ""
            w.writerow([r.sample_id, r.ground, r.aerial, r.synth or "", lat, lon])


@dataclass
class LoadedDataset:
    """All images of one split in memory, NCHW float64 in [0, 1]."""

    ids: list[str]
    ground: np.ndarray
    aerial: np.ndarray
    synth: np.ndarray | None = None
    geos: list[GeoSample] | None = None


def _stack_images(paths: list[Path], what: str) -> np.ndarray:
    imgs = []
    shape = None
    for p in paths:
        img = read_pnm(p)
        if img.ndim == 2:
            img = img[None]
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{what} image {p} has shape {img.shape}, expected {shape}")
        imgs.append(img)
    return np.stack(imgs)


def load_dataset(manifest: Manifest, need_synth: bool = False) -> LoadedDataset:
    ground = _stack_images([manifest.path(r.ground) for r in manifest.rows], "ground")
    aerial = _stack_images([manifest.path(r.aerial) for r in manifest.rows], "aerial")
    synth = None
    if need_synth or manifest.has_synth:
        for r in manifest.rows:
            if not r.synth:
                raise DataError(f"sample {r.sample_id!r} has no synthesized input")
        synth = _stack_images([manifest.path(r.synth) for r in manifest.rows], "synth")
    geos = manifest.geo_samples() if manifest.has_geo else None
    return LoadedDataset(manifest.ids(), ground, aerial, synth, geos)
