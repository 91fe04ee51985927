"""
Phase 4: State Bundle I/O
Hidden-state bundles on disk as GDFT tensors plus a key=value manifest,
and the byte accounting derived from that serialization.
"""

from pathlib import Path

from phase1_parsing.tensor_io import encode_tensor, read_manifest, read_tensor, write_manifest, write_tensor
from phase2_tensors import VoxelGrid
from phase3_fusion import DepthDistribution, MotionField, SceneParams, VoxelHidden

from .schemas import HiddenStateBundle, SequenceError


MANIFEST = "manifest.txt"


def bundle_tensors(bundle: HiddenStateBundle) -> dict[str, object]:
    """Flat name -> array view of a bundle; names double as file stems."""
    tensors = {'h_v': bundle.h_v.state.data, 'h_m': bundle.h_m.offsets}
    for name, value in bundle.h_s.tensors().items():
        tensors[f'h_s_{name}'] = value
    for i, dist in enumerate(bundle.h_g):
        tensors[f'h_g{i}_probs'] = dist.probs
        tensors[f'h_g{i}_centers'] = dist.bin_centers
    return tensors


def bundle_nbytes(bundle: HiddenStateBundle) -> dict[str, int]:
    """Serialized bytes per component: h_v, h_s, h_m, h_g."""
    sizes = {'h_v': 0, 'h_s': 0, 'h_m': 0, 'h_g': 0}
    for name, value in bundle_tensors(bundle).items():
        component = name[:3]
        sizes[component] += len(encode_tensor(value))
    return sizes


def save_bundle(bundle: HiddenStateBundle, directory: str | Path) -> int:
    """
    Write every tensor of the bundle and a manifest into `directory`.

    Returns:
        Total tensor bytes written
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = {'frame_index': str(bundle.frame_index), 'views': str(len(bundle.h_g))}
    written = 0
    for name, value in bundle_tensors(bundle).items():
        file_name = f"{name}.gdft"
        written += write_tensor(directory / file_name, value)
        entries[name] = file_name
    write_manifest(directory / MANIFEST, entries)
    return written


def load_bundle(directory: str | Path) -> HiddenStateBundle:
    """Inverse of `save_bundle`."""
    directory = Path(directory)
    entries = read_manifest(directory / MANIFEST)

    def load(name: str):
        if name not in entries:
            raise SequenceError(f"{directory / MANIFEST} has no entry for {name}")
        return read_tensor(directory / entries[name])

    views = int(entries.get('views', '0'))
    return HiddenStateBundle(
        h_v=VoxelHidden(state=VoxelGrid(data=load('h_v'))),
        h_s=SceneParams.from_tensors({name: load(f'h_s_{name}') for name in ('gamma', 'beta', 'W', 'b')}),
        h_m=MotionField(offsets=load('h_m')),
        h_g=[
            DepthDistribution(probs=load(f'h_g{i}_probs'), bin_centers=load(f'h_g{i}_centers'))
            for i in range(views)
        ],
        frame_index=int(entries['frame_index']),
    )
