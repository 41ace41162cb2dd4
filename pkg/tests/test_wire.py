"""Frame validation: every accepted frame is well-formed, everything else
raises a coded WireError."""
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compbench.wire import (
    MESSAGE_TYPES,
    WireError,
    encode,
    error_message,
    parse_message,
    state_message,
)

GOOD_INPUT = {
    "type": "input", "seq": 1, "t_ms": 123.0,
    "pos": [0.1, 0.2, 0.3], "quat": [1.0, 0.0, 0.0, 0.0],
    "trigger": 0.7, "buttons": {"menu": False, "grip": True},
}


def test_valid_input_round_trips():
    msg = parse_message(json.dumps(GOOD_INPUT))
    assert msg["type"] == "input"
    assert msg["pos"] == [0.1, 0.2, 0.3]
    assert msg["trigger"] == 0.7


def test_hello_checks_protocol():
    ok = parse_message(json.dumps(
        {"type": "hello", "arm": "left", "protocol": 1}))
    assert ok["arm"] == "left"
    with pytest.raises(WireError) as err:
        parse_message(json.dumps(
            {"type": "hello", "arm": "left", "protocol": 2}))
    assert err.value.code == "bad_protocol"


def test_bad_json_coded():
    with pytest.raises(WireError) as err:
        parse_message("{nope")
    assert err.value.code == "bad_json"
    with pytest.raises(WireError) as err:
        parse_message("[1, 2]")
    assert err.value.code == "bad_json"


def test_unknown_type_rejected():
    with pytest.raises(WireError) as err:
        parse_message(json.dumps({"type": "telemetry"}))
    assert err.value.code == "bad_type"


@pytest.mark.parametrize("field", sorted(GOOD_INPUT))
def test_missing_field_rejected(field):
    if field == "type":
        return
    broken = {k: v for k, v in GOOD_INPUT.items() if k != field}
    with pytest.raises(WireError) as err:
        parse_message(json.dumps(broken))
    assert err.value.code == "missing_field"


def test_non_unit_quaternion_rejected():
    broken = dict(GOOD_INPUT, quat=[2.0, 0.0, 0.0, 0.0])
    with pytest.raises(WireError) as err:
        parse_message(json.dumps(broken))
    assert err.value.code == "bad_field"


def test_non_finite_numbers_rejected():
    broken = dict(GOOD_INPUT, pos=[0.0, 1e400, 0.0])
    with pytest.raises(WireError):
        parse_message(json.dumps(broken))


def test_trigger_clamped_on_parse():
    noisy = dict(GOOD_INPUT, trigger=1.3)
    assert parse_message(json.dumps(noisy))["trigger"] == 1.0


def test_buttons_must_be_booleans():
    broken = dict(GOOD_INPUT, buttons={"menu": 1, "grip": False})
    with pytest.raises(WireError) as err:
        parse_message(json.dumps(broken))
    assert err.value.code == "bad_field"


def test_state_message_round_trips():
    text = state_message(t=1.25, ee_pos=[0.3, 0, 0.2],
                         ee_quat=[1, 0, 0, 0], wrench=[0, 0, 5, 0, 0, 0],
                         gripper=0.5, mode="mid", haptic=0.25, clutch=True)
    msg = parse_message(text)
    assert msg["mode"] == "mid"
    assert msg["wrench"][2] == 5.0
    assert msg["clutch"] is True


def test_state_rejects_bad_mode():
    with pytest.raises(WireError):
        state_message(t=0, ee_pos=[0, 0, 0], ee_quat=[1, 0, 0, 0],
                      wrench=[0] * 6, gripper=0.5, mode="soft",
                      haptic=0.0, clutch=False)


def test_error_message_round_trips():
    msg = parse_message(error_message("bad_seq", "sequence went backwards"))
    assert msg["code"] == "bad_seq"


def test_encode_validates_outgoing():
    with pytest.raises(WireError):
        encode({"type": "haptic", "t": 0.0, "intensity": 1.5})


@given(st.text(max_size=120))
@settings(max_examples=80, deadline=None)
def test_arbitrary_text_never_crashes_uncoded(text):
    try:
        msg = parse_message(text)
        assert msg["type"] in MESSAGE_TYPES
    except WireError as err:
        assert err.code


@given(st.dictionaries(st.sampled_from(list(GOOD_INPUT)),
                       st.one_of(st.none(), st.booleans(),
                                 st.floats(allow_nan=False),
                                 st.text(max_size=6),
                                 st.lists(st.floats(allow_nan=False),
                                          max_size=5))))
@settings(max_examples=80, deadline=None)
def test_fuzzed_objects_parse_or_reject(fields):
    frame = dict(GOOD_INPUT, **fields)
    try:
        msg = parse_message(json.dumps(frame))
        assert msg["type"] in MESSAGE_TYPES
    except WireError as err:
        assert err.code
