"""Dataset manifest: scene seeds, split assignment, regeneration."""

from __future__ import annotations

import dataclasses
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, FormatError
from ..kvtext import read_kv_file, write_kv_file
from .dlt import write_bundle
from .synth import SceneSpec, brightness_proxy, generate_scene

MANIFEST_NAME = "manifest.txt"
SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    seed: int
    scene_seeds: list[int]
    splits: dict[str, list[int]]
    spec: dict[str, str]  # SceneSpec fields except the per-scene seed
    spec_hash: str

    @property
    def n_scenes(self) -> int:
        return len(self.scene_seeds)

    def scene_spec(self, scene_id: int) -> SceneSpec:
        d = dict(self.spec)
        d["seed"] = str(self.scene_seeds[scene_id])
        return SceneSpec.from_dict(d)

    def scene_dir(self, root, scene_id: int) -> Path:
        return Path(root) / f"scene_{scene_id:04d}"


def _hash_spec(seed: int, n_scenes: int, spec: dict[str, str]) -> str:
    canon = f"seed={seed};n={n_scenes};" + ";".join(
        f"{k}={spec[k]}" for k in sorted(spec))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _systematic_pick(pool: list[int], k: int) -> list[int]:
    """Every (n/k)-th element, midpoints first; spreads picks over the pool."""
    n = len(pool)
    return [pool[int((j + 0.5) * n / k)] for j in range(k)]


def make_manifest(n_scenes: int, fractions: tuple[float, float, float],
                  seed: int, spec: SceneSpec | None = None) -> DatasetManifest:
    """Deterministic seeds and a disjoint train/val/test split.

    Val and test sizes are floored; the remainder goes to train.  The split
    is stratified by each scene's predicted brightness (computable from its
    seed alone) so the scene-level statistics stay similar across splits
    even when val and test hold only a handful of scenes.
    """
    if n_scenes < 1:
        raise ConfigError("need >= 1 scene")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("fractions must be three non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    spec = spec or SceneSpec(seed=0)
    spec_d = spec.to_dict()
    spec_d.pop("seed")

    rng = np.random.default_rng(seed)
    scene_seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, n_scenes)]
    proxy = []
    for s in scene_seeds:
        d = dict(spec_d, seed=str(s))
        proxy.append(brightness_proxy(SceneSpec.from_dict(d)))
    perm = rng.permutation(n_scenes)
    order = sorted((int(i) for i in perm), key=lambda i: proxy[i])

    n_val = int(fractions[1] * n_scenes)
    n_test = int(fractions[2] * n_scenes)
    val = _systematic_pick(order, n_val)
    rest = [i for i in order if i not in set(val)]
    test = _systematic_pick(rest, n_test)
    train = [i for i in rest if i not in set(test)]
    splits = {"train": sorted(train), "val": sorted(val), "test": sorted(test)}
    return DatasetManifest(seed=seed, scene_seeds=scene_seeds, splits=splits,
                           spec=spec_d,
                           spec_hash=_hash_spec(seed, n_scenes, spec_d))


def write_manifest(manifest: DatasetManifest, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    pairs = {
        "format_version": "1",
        "seed": str(manifest.seed),
        "n_scenes": str(manifest.n_scenes),
        "spec_hash": manifest.spec_hash,
        "scene_seeds": ",".join(str(s) for s in manifest.scene_seeds),
    }
    for k, v in manifest.spec.items():
        pairs[f"spec.{k}"] = v
    for split in SPLITS:
        pairs[f"split.{split}"] = ",".join(str(i) for i in manifest.splits[split])
    write_kv_file(root / MANIFEST_NAME, pairs)


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    pairs = read_kv_file(path)
    try:
        seeds = [int(s) for s in pairs["scene_seeds"].split(",") if s]
        splits = {}
        for split in SPLITS:
            raw = pairs.get(f"split.{split}", "")
            splits[split] = [int(i) for i in raw.split(",") if i]
        spec = {k[len("spec."):]: v for k, v in pairs.items()
                if k.startswith("spec.")}
        manifest = DatasetManifest(
            seed=int(pairs["seed"]), scene_seeds=seeds, splits=splits,
            spec=spec, spec_hash=pairs["spec_hash"])
    except KeyError as e:
        raise FormatError(f"dataset manifest missing key {e}") from e
    if manifest.spec_hash != _hash_spec(manifest.seed, manifest.n_scenes,
                                        manifest.spec):
        raise FormatError("dataset manifest spec_hash does not match contents")
    return manifest


def generate_dataset(root, manifest: DatasetManifest, workers: int = 1) -> None:
    """Write the manifest and every scene bundle under `root`.

    Scenes are independent, so generation parallelizes across a small
    thread pool; output bytes do not depend on the worker count.
    """
    root = Path(root)
    write_manifest(manifest, root)

    def one(scene_id: int) -> None:
        bundle = generate_scene(manifest.scene_spec(scene_id))
        write_bundle(bundle, manifest.scene_dir(root, scene_id))

    ids = range(manifest.n_scenes)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, ids))
    else:
        for i in ids:
            one(i)
