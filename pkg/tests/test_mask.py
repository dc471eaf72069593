import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from egojoint.mask import MaskConfigError, TokenLayout, build_interaction_mask, latent_permissions

from oracles import mask_permissions_bruteforce


def configs(max_raw=32):
    for c in (1, 2, 4, 8):
        for r in (1, 2, 3):
            for F_v in range(1, max_raw // c + 2):
                yield F_v, r * (F_v - 1) + 1, c, r


@pytest.mark.parametrize("F_v,F_m,c,r", list(configs()))
def test_matches_bruteforce_exhaustive(F_v, F_m, c, r):
    v2m, m2v = latent_permissions(F_v, F_m, c, r)
    bv2m, bm2v = mask_permissions_bruteforce(F_v, F_m, c, r)
    np.testing.assert_array_equal(v2m, bv2m)
    np.testing.assert_array_equal(m2v, bm2v)


def test_reference_configuration():
    v2m, m2v = latent_permissions(11, 21, 4, 2)
    bv2m, bm2v = mask_permissions_bruteforce(11, 21, 4, 2)
    np.testing.assert_array_equal(v2m, bv2m)
    np.testing.assert_array_equal(m2v, bm2v)
    assert set(np.nonzero(v2m[3])[0]) == {5, 6}
    assert set(np.nonzero(m2v[1])[0]) == {0, 1}
    assert v2m[0, 0] and m2v[0, 0]
    # latent 0 of either modality touches nothing else across the boundary
    assert v2m[0].sum() == 1 and m2v[0].sum() == 1


def test_inconsistent_lengths_raise():
    with pytest.raises(MaskConfigError):
        latent_permissions(3, 4, 4, 2)
    with pytest.raises(MaskConfigError):
        latent_permissions(0, 1)


@given(st.integers(0, 6), st.integers(1, 6), st.integers(1, 4), st.booleans())
def test_token_mask_structure(text_len, F_v, tokens, enabled):
    F_m = 2 * (F_v - 1) + 1
    lay = TokenLayout(text_len, F_v, tokens, F_m)
    m = build_interaction_mask(lay, 4, 2, enabled=enabled).allowed
    assert m.shape == (lay.total, lay.total)
    assert m[lay.text, :].all() and m[:, lay.text].all()
    assert m[lay.video, lay.video].all() and m[lay.motion, lay.motion].all()
    assert m.any(axis=1).all()
    if not enabled:
        assert m.all()
        return
    v2m, m2v = latent_permissions(F_v, F_m)
    vm = m[lay.video, lay.motion]
    mv = m[lay.motion, lay.video]
    for lv in range(F_v):
        rows = vm[lv * tokens : (lv + 1) * tokens]
        assert (rows == v2m[lv]).all()
        assert (mv[:, lv * tokens : (lv + 1) * tokens] == m2v[:, [lv]]).all()


def test_motion_only_layout_is_dense():
    lay = TokenLayout(4, 0, 16, 5)
    assert build_interaction_mask(lay).allowed.all()


def test_dump_csv_and_png(tmp_path):
    lay = TokenLayout(2, 3, 4, 5)
    mask = build_interaction_mask(lay)
    mask.to_csv(tmp_path / "m.csv")
    mask.to_png(tmp_path / "m.png", scale=2)
    with open(tmp_path / "m.csv") as f:
        rows = [[int(v) for v in r] for r in csv.reader(f)]
    np.testing.assert_array_equal(np.array(rows, dtype=bool), mask.allowed)
    from PIL import Image

    assert Image.open(tmp_path / "m.png").size == (2 * lay.total, 2 * lay.total)
