import numpy as np
import pytest
from hypothesis import given, strategies as st

from hmdchan.channel import (MAGIC, ChannelSnapshot, ChannelTensor, Mpc, SounderModel, cir,
                             ctf_to_cir, extract_subchannel, normalization_factor,
                             normalize_channel, read_container, slice_to_csv, synthesize_ctf,
                             write_container)
from hmdchan.errors import DataError, DegenerateError, ShapeError
from hmdchan.geometry import (SPEED_OF_LIGHT, HmdConfiguration, Orientation, PortSet, hmd_ring,
                              isotropic_ports, standard_configuration)

V_ONLY = np.array([[0, 0], [0, 1]], dtype=complex)
SND = SounderModel(num_tones=64)


def _ray(amp=1.0, tau=10e-9, az=0.0, el=0.0, nu=0.0):
    return Mpc(amp * V_ONLY, aoa_azimuth=az, aoa_elevation=el, aod_azimuth=az + np.pi,
               delay=tau, doppler=nu)


# -- synthesis -----------------------------------------------------------------

def test_single_ray_is_pure_phase():
    h = synthesize_ctf([_ray(tau=12.3e-9)], isotropic_ports(), isotropic_ports(), SND)
    assert h.shape == (1, 1, 64)
    np.testing.assert_allclose(np.abs(h), 1.0, atol=1e-12)
    expected = np.exp(-2j * np.pi * SND.tones() * 12.3e-9)
    np.testing.assert_allclose(h[0, 0], expected, atol=1e-9)


@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(1e-9, 50e-9), st.floats(0.5e-9, 30e-9))
def test_two_rays_closed_form(a1, a2, t1, dt):
    h = synthesize_ctf([_ray(a1, t1), _ray(a2, t1 + dt)], isotropic_ports(), isotropic_ports(), SND)
    f = SND.tones()
    expected = a1 ** 2 + a2 ** 2 + 2 * a1 * a2 * np.cos(2 * np.pi * f * dt)
    np.testing.assert_allclose(np.abs(h[0, 0]) ** 2, expected, rtol=1e-7, atol=1e-9)


def test_doppler_rotates_with_switch_time():
    snd = SounderModel(num_tones=8, sampling_time=5e-3)
    h = synthesize_ctf([_ray(nu=100.0)], isotropic_ports(), isotropic_ports(2), snd)
    # second AP port is sampled 5 ms later: exp(j 2 pi 100 Hz 5 ms) = -1
    np.testing.assert_allclose(h[0, 1], -h[0, 0], atol=1e-9)


def test_static_channel_ignores_schedule():
    a = synthesize_ctf([_ray()], isotropic_ports(3), isotropic_ports(2),
                       SounderModel(num_tones=8, sampling_time=1.0))
    b = synthesize_ctf([_ray()], isotropic_ports(3), isotropic_ports(2),
                       SounderModel(num_tones=8, sampling_time=0.0))
    np.testing.assert_allclose(a, b)


def test_isotropic_ports_see_identical_channel():
    rays = [_ray(1.0, 8e-9, 0.3), _ray(0.4, 15e-9, 2.0), _ray(0.2, 21e-9, -1.0)]
    h = synthesize_ctf(rays, isotropic_ports(4), isotropic_ports(3), SND)
    for m in range(4):
        for n in range(3):
            np.testing.assert_allclose(h[m, n], h[0, 0])


def test_element_offset_phase():
    # two isotropic ports half a wavelength apart along the ray direction
    lam = SPEED_OF_LIGHT / 28e9
    pos = np.array([[0.0, 0, 0], [lam / 2, 0, 0]])
    ports = PortSet(pos, np.tile([1.0, 0, 0], (2, 1)), np.tile([0, 1.0, 0], (2, 1)),
                    np.array([1, 1]), np.zeros(2, int), isotropic=True)
    snd = SounderModel(num_tones=2, bandwidth=2.0)  # tones at fc - 1 Hz, fc
    h = synthesize_ctf([_ray(tau=3e-9)], ports, isotropic_ports(), snd)
    assert h[1, 0, 1] / h[0, 0, 1] == pytest.approx(-1.0, abs=1e-6)


def test_linearity_in_paths():
    a, b = _ray(0.7, 9e-9, 0.5), _ray(0.3, 17e-9, -2.0)
    ring, ap = hmd_ring(), isotropic_ports(2)
    ha = synthesize_ctf([a], ring, ap, SND)
    hb = synthesize_ctf([b], ring, ap, SND)
    np.testing.assert_allclose(synthesize_ctf([a, b], ring, ap, SND), ha + hb, atol=1e-12)
    assert np.all(synthesize_ctf([], ring, ap, SND) == 0)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_yaw_equals_counter_rotated_arrivals(yaw, az):
    ring, ap = hmd_ring(), isotropic_ports()
    turned = synthesize_ctf([_ray(az=az)], ring, ap, SND, Orientation(yaw=yaw))
    static = synthesize_ctf([_ray(az=az - yaw)], ring, ap, SND)
    np.testing.assert_allclose(turned, static, atol=1e-9)


def test_patch_ports_follow_arrival_direction():
    # a ray from straight ahead lights array VII and leaves array III dark
    h = synthesize_ctf([_ray(az=0.0)], hmd_ring(), isotropic_ports(), SND)
    p = np.sum(np.abs(h) ** 2, axis=(1, 2)).reshape(8, 32).sum(axis=1)
    assert np.argmax(p) == 6
    assert p[2] == 0


def test_system_response_and_noise():
    g = np.full(64, 2.0 + 0j)
    snd = SounderModel(num_tones=64, system_response=g)
    h = synthesize_ctf([_ray()], isotropic_ports(), isotropic_ports(), snd)
    np.testing.assert_allclose(np.abs(h), 2.0)
    noisy = SounderModel(num_tones=4096, noise_power=0.5)
    n = synthesize_ctf([], isotropic_ports(), isotropic_ports(), noisy, rng=np.random.default_rng(1))
    assert np.mean(np.abs(n) ** 2) == pytest.approx(0.5, rel=0.06)


def test_sounder_validation():
    with pytest.raises(DataError):
        SounderModel(num_tones=1)
    with pytest.raises(ShapeError):
        SounderModel(num_tones=8, system_response=np.ones(4))
    with pytest.raises(DataError):
        SounderModel(num_tones=2, system_response=np.array([1, 0]))


def test_tone_plan():
    s = SounderModel()
    assert s.tone_spacing == pytest.approx(375e3)
    assert s.tones()[1024] == pytest.approx(28e9)
    assert s.first_tone == pytest.approx(28e9 - 384e6)
    t = s.sampling_times(2, 3)
    assert t[1, 0] == pytest.approx(3 * 18.3e-6)


def test_mpc_validation():
    with pytest.raises(ShapeError):
        Mpc(np.ones(3))
    with pytest.raises(DataError):
        Mpc(np.full((2, 2), np.nan))
    with pytest.raises(DataError):
        Mpc(np.eye(2), delay=-1e-9)
    assert Mpc(np.eye(2) * 2).power == pytest.approx(8.0)


# -- delay domain ----------------------------------------------------------------

def test_flat_ctf_gives_delta():
    h = cir(np.ones(64))
    assert h[0] == pytest.approx(8.0)
    assert np.max(np.abs(h[1:])) < 1e-12


@given(st.integers(0, 63))
def test_shift_theorem(n0):
    k = np.arange(64)
    h = cir(np.exp(-2j * np.pi * k * n0 / 64))
    assert np.argmax(np.abs(h)) == n0
    assert abs(h[n0]) == pytest.approx(8.0)


def test_two_taps_on_grid():
    B = SND.bandwidth
    h = synthesize_ctf([_ray(1.0, 5 / B), _ray(0.5, 15 / B)], isotropic_ports(), isotropic_ports(), SND)
    pdp = ctf_to_cir(h, B)
    top = np.argsort(pdp.power)[::-1][:2]
    assert set(top) == {5, 15}
    assert pdp.power[15] / pdp.power[5] == pytest.approx(0.25, rel=1e-9)
    assert pdp.delays[1] == pytest.approx(1 / B)


@given(st.integers(0, 2 ** 31))
def test_parseval(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 2, 32)) + 1j * rng.normal(size=(3, 2, 32))
    assert np.sum(np.abs(cir(x)) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2))


def test_non_uniform_grid_rejected():
    with pytest.raises(DataError):
        cir(np.ones(4), freqs=[0, 1, 2, 4])
    with pytest.raises(DataError):
        cir(np.ones(1))
    cir(np.ones(4), freqs=[0, 1, 2, 3])


# -- normalisation and sub-channels --------------------------------------------

def test_normalization_examples():
    full = np.full((256, 2, 4), 2.0 + 0j)
    h, f = normalize_channel(full)
    assert f == pytest.approx(0.5)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0)
    assert normalization_factor(full, "band") == pytest.approx(0.25)
    with pytest.raises(DegenerateError):
        normalization_factor(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        normalization_factor(full, "median")


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.sampled_from(["forward", "backward"]))
def test_normalise_commutes_with_extraction(seed, q, facing):
    rng = np.random.default_rng(seed)
    full = rng.normal(size=(256, 2, 3)) + 1j * rng.normal(size=(256, 2, 3))
    cfg = standard_configuration(q, facing)
    h, f = normalize_channel(full)
    np.testing.assert_allclose(extract_subchannel(h, cfg), f * extract_subchannel(full, cfg))


def test_single_array_extractions_partition_the_channel():
    full = np.arange(256 * 2 * 2).reshape(256, 2, 2)
    parts = [extract_subchannel(full, HmdConfiguration(frozenset({a}))) for a in range(1, 9)]
    np.testing.assert_array_equal(np.concatenate(parts, axis=0), full)


def test_extraction_shape_check():
    with pytest.raises(ShapeError):
        extract_subchannel(np.ones((128, 2, 2)), standard_configuration(1))


def test_channel_tensor():
    data = np.ones((5, 256, 2, 3), dtype=complex) * 3
    t = ChannelTensor(data, 1e9, 1e6, ("snapshot",))
    assert (t.num_rx, t.num_tx, t.num_tones) == (256, 2, 3)
    assert t.tones()[-1] == pytest.approx(1e9 + 2e6)
    sub = t.normalized().subchannel(standard_configuration(2))
    assert sub.data.shape == (5, 64, 2, 3)
    np.testing.assert_allclose(np.abs(sub.data), 1.0)
    with pytest.raises(ShapeError):
        ChannelTensor(np.ones((2, 2)))


# -- container -------------------------------------------------------------------

def test_container_round_trip(tmp_path, rng):
    data = (rng.normal(size=(4, 3, 5)) + 1j * rng.normal(size=(4, 3, 5))).astype(np.complex64)
    snap = ChannelSnapshot(data, 27.6e9, 6e6, [0, 1, 2, 3], {"seed": 3})
    p = tmp_path / "a.ctf"
    write_container(p, snap)
    raw = p.read_bytes()
    assert raw.startswith(MAGIC)
    assert len(raw) == len(MAGIC) + 4 + int.from_bytes(raw[8:12], "little") + data.size * 8
    back = read_container(p)
    np.testing.assert_array_equal(back.data, data)
    assert back.first_tone == 27.6e9 and back.tone_spacing == 6e6
    assert back.meta == {"seed": 3}
    text = slice_to_csv(back, rows=[1], cols=[2]).splitlines()
    assert text[0] == "m,n,k,freq_hz,re,im"
    assert len(text) == 6
    m, n, k, f, re, im = text[3].split(",")
    assert (int(m), int(n), int(k)) == (1, 2, 2)
    assert float(f) == pytest.approx(27.6e9 + 12e6)
    assert complex(float(re), float(im)) == pytest.approx(complex(data[1, 2, 2]), rel=1e-6)


def test_container_errors(tmp_path):
    p = tmp_path / "bad.ctf"
    p.write_bytes(b"NOTACTF!" + b"\x00" * 8)
    with pytest.raises(DataError):
        read_container(p)
    snap = ChannelSnapshot(np.ones((2, 2, 2), complex), 0.0, 1.0)
    write_container(p, snap)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(DataError):
        read_container(p)
    with pytest.raises(ShapeError):
        write_container(p, ChannelSnapshot(np.ones((2, 2)), 0.0, 1.0))
