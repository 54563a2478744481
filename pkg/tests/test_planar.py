import numpy as np
import pytest

from src.exceptions import ReconstructionError
from src.planar import PLANES
from src.planar import Plane
from src.planar import SliceStack
from src.planar import slice_field
from src.planar import stack_slices
from src.volume import LabelMask
from src.volume import Volume


def test_plane_priority_order() -> None:
    assert list(PLANES) == sorted(PLANES)
    assert [plane.tag for plane in PLANES] == ["sagittal", "coronal", "axial"]
    assert Plane.from_tag("coronal") is Plane.CORONAL


@pytest.mark.parametrize(
    "plane, count, shape",
    [
        (Plane.AXIAL, 6, (4, 5)),
        (Plane.CORONAL, 5, (4, 6)),
        (Plane.SAGITTAL, 4, (5, 6)),
    ],
)
def test_slice_dims(plane: Plane, count: int, shape: tuple[int, int]) -> None:
    stack = slice_field(Volume(voxels=np.zeros((4, 5, 6))), plane)
    assert stack.count == count
    assert stack.slice_shape == shape


@pytest.mark.parametrize("plane", PLANES)
def test_single_voxel(plane: Plane) -> None:
    stack = slice_field(Volume(voxels=np.ones((1, 1, 1))), plane)
    assert stack.count == 1
    assert stack.slice_shape == (1, 1)


def test_slices_are_copies() -> None:
    source = np.zeros((3, 3, 3))
    stack = slice_field(source, Plane.AXIAL)
    stack[0][0, 0] = 9.0
    assert source[0, 0, 0] == 0.0


@pytest.mark.parametrize("plane", PLANES)
def test_round_trip_mask(random_mask: LabelMask, plane: Plane) -> None:
    restored = stack_slices(slice_field(random_mask, plane), random_mask.dims)
    assert restored.dtype == random_mask.labels.dtype
    assert restored.tobytes() == random_mask.labels.tobytes()


def test_round_trip_random_fields() -> None:
    rng = np.random.default_rng(42)
    for _ in range(200):
        dims = tuple(int(size) for size in rng.integers(1, 7, size=3))
        volume = Volume(voxels=rng.normal(size=dims))
        mask = LabelMask(labels=rng.integers(0, 5, size=dims), num_classes=4)
        for plane in PLANES:
            assert stack_slices(slice_field(volume, plane), dims).tobytes() == volume.voxels.tobytes()
            assert stack_slices(slice_field(mask, plane), dims).tobytes() == mask.labels.tobytes()


def test_cross_plane_voxel_lookup(random_volume: Volume) -> None:
    rng = np.random.default_rng(3)
    stacks = {plane: slice_field(random_volume, plane) for plane in PLANES}
    for x, y, z in rng.integers(0, 8, size=(50, 3)):
        value = random_volume.voxels[x, y, z]
        assert stacks[Plane.SAGITTAL][x][y, z] == value
        assert stacks[Plane.CORONAL][y][x, z] == value
        assert stacks[Plane.AXIAL][z][x, y] == value


def test_stack_leading_channels() -> None:
    field = np.arange(3 * 2 * 3 * 4, dtype=np.float32).reshape((3, 2, 3, 4))
    assert np.array_equal(stack_slices(slice_field(field, Plane.CORONAL), (2, 3, 4)), field)


def test_stack_wrong_count() -> None:
    stack = SliceStack(Plane.AXIAL, tuple(np.zeros((2, 2)) for _ in range(3)))
    with pytest.raises(ReconstructionError, match="axial stack has 3 slices, expected 4"):
        stack_slices(stack, (2, 2, 4))


def test_stack_wrong_shape() -> None:
    stack = SliceStack(Plane.SAGITTAL, tuple(np.zeros((2, 2)) for _ in range(2)))
    with pytest.raises(ReconstructionError, match="sagittal"):
        stack_slices(stack, (2, 3, 4))
