import pytest
from hypothesis import given, settings, strategies as st

from spacehsm.config import ScenarioConfig, config_from_dict, load_config, parse_config, serialize_config
from spacehsm.errors import ConfigError


def test_empty_document_gives_defaults():
    cfg = parse_config(b"")
    assert cfg == ScenarioConfig()
    assert cfg.link.uplink_bps == 1200 and cfg.power.battery_wh == 10.0
    assert cfg.hsm.retry_limit == 3 and cfg.hsm.beacon_period_s == 60


@pytest.mark.parametrize("doc,path", [
    ("duration_s: -5", "duration_s"),
    ("bogus: 1", "bogus"),
    ("link: {uplink_bps: fast}", "link.uplink_bps"),
    ("workload: [{at: 1}, {at: 2, count: 0}]", "workload[1].count"),
    ("workload: [{at: 9999}]", "workload[0].at"),
    ("adversary: [{action: steal_key, at: 1}, {action: inject_faults, rate: 2, start: 0, end: 1}]",
     "adversary[1].rate"),
    ("adversary: [{action: suppress_log_submission, request: 0}]", "adversary[0].request"),
    ("stations: [{id: A}, {id: A}]", "stations"),
    ("consensus_threshold: 2", "consensus_threshold"),
    ("power: {daylight_s: 100}", "power"),
    ("stations: [{id: toolongname}]", "stations[0].id"),
    ("- just a list", ""),
    ("key: [unclosed", ""),
])
def test_errors_name_the_path(doc, path):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == path


def test_invalid_utf8():
    with pytest.raises(ConfigError):
        parse_config(b"\xff\xfe")


def test_requests_expand_in_order():
    cfg = parse_config("workload: [{at: 10, count: 3, interval_s: 5}, {at: 0, csr_size: 100}]")
    assert cfg.requests() == [(10, 2560, None), (15, 2560, None), (20, 2560, None), (0, 100, None)]


def test_load_config_from_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("seed: 3\n")
    assert load_config(p).seed == 3


station = st.builds(dict, id=st.text("ABCXYZ0123", min_size=1, max_size=6),
                    pass_offset_s=st.floats(0, 5000))
configs = st.fixed_dictionaries({
    "seed": st.integers(0, 2**64 - 1),
    "duration_s": st.floats(1000, 20000),
    "stations": st.lists(station, min_size=1, max_size=3, unique_by=lambda s: s["id"]),
    "link": st.fixed_dictionaries({"loss_probability": st.floats(0, 1), "downlink_bps": st.floats(100, 9600)}),
    "hsm": st.fixed_dictionaries({"scheme": st.sampled_from(["rsa2048", "standin"]),
                                  "fault_rate": st.floats(0, 1)}),
    "ground": st.fixed_dictionaries({"reset_delay_s": st.none() | st.floats(0, 100)}),
    "workload": st.lists(st.fixed_dictionaries({"at": st.floats(0, 500), "count": st.integers(1, 3),
                                                "interval_s": st.floats(0, 100)}), max_size=3),
    "adversary": st.lists(st.one_of(
        st.fixed_dictionaries({"action": st.just("steal_key"), "at": st.floats(0, 900)}),
        st.fixed_dictionaries({"action": st.just("spoof_beacon"), "at": st.floats(0, 900)}),
        st.fixed_dictionaries({"action": st.just("inject_faults"), "rate": st.floats(0, 1),
                               "start": st.floats(0, 400), "end": st.floats(400, 900)}),
    ), max_size=3),
})


@settings(max_examples=100, deadline=None)
@given(configs)
def test_serialize_round_trip(data):
    cfg = config_from_dict(data)
    assert parse_config(serialize_config(cfg)) == cfg
