import numpy as np
import pytest

from crustprobe import synth, tiles

C = synth.SeafloorClass.MN_CRUST
S = synth.SeafloorClass.SEDIMENT
N = synth.SeafloorClass.NODULES


def three_class_spec(seed=42, snr_db=30.0, length=3.0, samples=512, signature=None):
    third = length / 3.0
    return synth.SceneSpec(
        transect_length_m=length,
        patches=(
            synth.Patch(0.0, third, C, 0.05),
            synth.Patch(third, 2 * third, S),
            synth.Patch(2 * third, length, N),
        ),
        auv_altitude_m=0.2,
        samples_per_ping=samples,
        snr_db=snr_db,
        seed=seed,
        signature=signature or synth.EchoSignature(),
    )


@pytest.fixture(scope="session")
def small_survey():
    """3 m three-class survey at 30 dB: 600 pings of 512 samples."""
    return synth.synthesize_survey(three_class_spec())


@pytest.fixture(scope="session")
def noiseless_survey():
    return synth.synthesize_survey(three_class_spec(snr_db=float("inf")))


@pytest.fixture(scope="session")
def training_tiles():
    """64 varied crust tiles: the autoencoder regression-baseline dataset."""
    spec = synth.SceneSpec(
        transect_length_m=12.0,
        patches=(synth.Patch(0.0, 6.0, C, 0.04), synth.Patch(6.0, 12.0, C, 0.07)),
        auv_altitude_m=0.2,
        samples_per_ping=512,
        snr_db=30.0,
        seed=42,
    )
    survey, _, _ = synth.synthesize_survey(spec)
    echogram = tiles.build_echogram(survey)
    cols = np.linspace(20, echogram.n_pings - 20, 64).astype(int)
    tile_list = [tiles.cut_tile(echogram, int(c)) for c in cols]
    values = np.stack([t.values for t in tile_list]).astype(np.float64)
    positions = np.array([t.position for t in tile_list])
    return values, positions
