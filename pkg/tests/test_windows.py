import logging

import numpy as np
import pytest

from conftest import block_part
from ThermoForge.TFErrors import FormatError, WindowError
from ThermoForge.TFGeometry import attach_substrate, element_centers
from ThermoForge.TFThermal import initial_state
from ThermoForge.TFWindows import (
    Channel,
    WindowDataset,
    boundary_impact,
    characteristic_radius,
    count_windows,
    extract_windows,
    load_dataset,
    manifest_path,
    sample_events,
    save_dataset,
    suggested_edge,
    window_table,
)


@pytest.fixture
def small_windows(small_history, small_domain):
    return extract_windows(small_history, small_domain, k_recent=10, edge=11, geometry_id=4)


def test_characteristic_radius():
    assert characteristic_radius(12.0, 0.1) == pytest.approx(np.sqrt(1.2))
    assert characteristic_radius(12.0, 0.4) == pytest.approx(np.sqrt(4.8))
    assert suggested_edge(12.0, 0.4, 2.0) == 11
    with pytest.raises(WindowError):
        characteristic_radius(12.0, 0.0)


def test_narrow_window_edge_is_logged(small_history, small_domain, model, caplog):
    alpha_p = float(model.diffusivity(model.activation_T))
    assert suggested_edge(alpha_p, small_history.schedule.dt, 2.0) == 11
    with caplog.at_level(logging.WARNING, logger="ThermoForge.TFWindows"):
        extract_windows(small_history, small_domain, edge=11, events=[0], alpha_p=alpha_p)
        assert not caplog.records
        extract_windows(small_history, small_domain, edge=5, events=[0], alpha_p=alpha_p)
    assert "below the suggested 11" in caplog.text


def test_window_counts_follow_last_k_selection(small_windows, small_history):
    per_event = np.bincount(small_windows.events, minlength=len(small_history.schedule))
    assert per_event[0] == 1
    assert per_event[5] == 6
    assert np.all(per_event[9:] == 10)
    assert len(small_windows) == count_windows(len(small_history.schedule), 10)


def test_window_count_for_a_thousand_voxel_part():
    assert count_windows(1000, 10) == 9955
    assert 9400 <= count_windows(1000, 10) <= 10100


def test_channel_invariants(small_windows):
    rho = small_windows.inputs[:, Channel.rho_act]
    np.testing.assert_array_equal(rho > 0.5, small_windows.masks)
    void = ~small_windows.masks
    assert np.all(small_windows.inputs[:, Channel.T_in][void] == 25.0)
    assert np.all(small_windows.targets[void] == 25.0)
    assert np.all(small_windows.inputs[:, Channel.power] == 1.0)
    # Every anchor sits at the window centre and is active.
    assert small_windows.masks[:, 5, 5, 5].all()


def test_offsets_point_at_current_deposit(small_windows, small_history, small_domain):
    events = small_history.schedule.events
    sample = small_windows.sample(len(small_windows) - 10)
    site = np.array(small_domain.to_domain(events[sample.event]))
    anchor = np.array(sample.anchor)
    expected = site - anchor
    np.testing.assert_allclose(
        sample.inputs[Channel.dx : Channel.dz + 1, 5, 5, 5], expected.astype(np.float32)
    )


def test_history_consistency(small_windows):
    by_key = {}
    for n, (event, anchor) in enumerate(zip(small_windows.events, small_windows.anchors)):
        by_key[(int(event), tuple(anchor))] = n
    checked = 0
    for (event, anchor), n in by_key.items():
        prev = by_key.get((event - 1, anchor))
        if prev is None:
            continue
        np.testing.assert_array_equal(
            small_windows.inputs[n, Channel.T_in], small_windows.targets[prev]
        )
        checked += 1
    assert checked > 0


def brute_force_distances(domain, active):
    size = domain.element_size
    centers = element_centers(domain.dims, size)
    conv, dirichlet = [], []
    nx, ny, nz = domain.dims
    for i, j, k in np.argwhere(active):
        for axis in range(3):
            for sign in (-1, 1):
                n = [i, j, k]
                n[axis] += sign
                inside = 0 <= n[0] < nx and 0 <= n[1] < ny and 0 <= n[2] < nz
                if inside and active[tuple(n)]:
                    continue
                face = centers[i, j, k].copy()
                face[axis] += 0.5 * sign * size
                if axis == 2 and sign == -1 and k == 0:
                    dirichlet.append(face)
                else:
                    conv.append(face)
    conv, dirichlet = np.array(conv), np.array(dirichlet)
    d_conv = np.zeros(domain.dims)
    d_dir = np.zeros(domain.dims)
    for idx in np.argwhere(active):
        c = centers[tuple(idx)]
        d_conv[tuple(idx)] = np.min(np.linalg.norm(conv - c, axis=1))
        d_dir[tuple(idx)] = np.min(np.linalg.norm(dirichlet - c, axis=1))
    return d_conv, d_dir


def test_boundary_impact_matches_brute_force():
    domain = attach_substrate(block_part((6, 6, 4)), layers=2)
    state = initial_state(domain)
    active = state.active.copy()
    active[:, :, 2:] = domain.occupancy[:, :, 2:]
    active[2, 3, 5] = False
    state = type(state)(T=state.T, active=active, solidified=active.copy())
    d_conv, d_dir = boundary_impact(domain, state)
    expected_conv, expected_dir = brute_force_distances(domain, active)
    np.testing.assert_allclose(d_conv, expected_conv, rtol=0, atol=1e-12)
    np.testing.assert_allclose(d_dir, expected_dir, rtol=0, atol=1e-12)
    assert d_conv[0, 0, 3] == pytest.approx(1.0)
    assert d_dir[3, 3, 0] == pytest.approx(1.0)


def test_interior_window_is_far_from_convection():
    domain = attach_substrate(block_part((15, 15, 15)), layers=2)
    state = initial_state(domain)
    state = type(state)(T=state.T, active=domain.occupancy, solidified=domain.occupancy)
    d_conv, _ = boundary_impact(domain, state)
    assert d_conv[7, 7, 9] >= 5 * domain.element_size


def test_dataset_round_trip(tmp_path, small_windows):
    path = save_dataset(small_windows, tmp_path / "w.amwin")
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.inputs, small_windows.inputs)
    np.testing.assert_array_equal(loaded.targets, small_windows.targets)
    np.testing.assert_array_equal(loaded.masks, small_windows.masks)
    np.testing.assert_array_equal(loaded.anchors, small_windows.anchors)
    np.testing.assert_array_equal(loaded.events, small_windows.events)
    assert set(loaded.geometry_ids.tolist()) == {4}
    assert loaded.provenance["schedule_hash"] == small_windows.provenance["schedule_hash"]
    assert loaded.normalization == small_windows.normalization
    assert manifest_path(path).exists()


def test_empty_dataset_round_trip(tmp_path):
    loaded = load_dataset(save_dataset(WindowDataset.empty(), tmp_path / "e.amwin"))
    assert len(loaded) == 0 and loaded.edge == 11


def test_corrupted_dataset_files(tmp_path, small_windows):
    path = save_dataset(small_windows.subset([0, 1]), tmp_path / "w.amwin")
    raw = path.read_bytes()
    (tmp_path / "magic.amwin").write_bytes(b"BADMAGIC" + raw[8:])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "magic.amwin")
    (tmp_path / "short.amwin").write_bytes(raw[:-100])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "short.amwin")


def test_event_sampling_caps_windows(small_history, small_domain):
    n_events = len(small_history.schedule)
    events = sample_events(n_events, 40, k_recent=10, seed=1)
    assert events == sorted(events)
    assert count_windows(n_events, 10) > 40
    subset = extract_windows(small_history, small_domain, events=events)
    assert 0 < len(subset) <= 40
    assert events == sample_events(n_events, 40, k_recent=10, seed=1)


def test_concat_and_window_table(small_windows):
    other = small_windows.subset(range(5))
    other.geometry_ids[:] = 9
    merged = WindowDataset.concat([small_windows, other])
    assert len(merged) == len(small_windows) + 5
    table = window_table({4: small_windows, 9: other})
    assert table == [
        {"geometry_id": 4, "windows": len(small_windows)},
        {"geometry_id": 9, "windows": 5},
    ]


def test_extraction_needs_a_schedule(small_history, small_domain):
    bare = type(small_history)(
        times=small_history.times,
        temperatures=small_history.temperatures,
        active=small_history.active,
    )
    with pytest.raises(WindowError):
        extract_windows(bare, small_domain)
