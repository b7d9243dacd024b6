import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for util.py

from apl import phantom
from apl.nifti import write_volume


@pytest.fixture(scope="session")
def phantom_disk(tmp_path_factory):
    """One phantom written to disk, shared by service/CLI tests."""
    d = tmp_path_factory.mktemp("phantom")
    res = phantom.generate(phantom.random_spec(4242))
    paths = {
        "image": d / "image.nii.gz",
        "mask": d / "mask.nii.gz",
        "annotation": d / "annotation.nii.gz",
    }
    write_volume(res.image, paths["image"])
    write_volume(res.mask.volume, paths["mask"])
    write_volume(res.annotation, paths["annotation"])
    return {"result": res, **paths}
