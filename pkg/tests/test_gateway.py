import threading

import pytest

from graphrepair import gateway as gw

from fake_server import FakeBackend, serve


def test_fixed_mock_and_synthetic_clock():
    g = gw.Gateway()
    g.register_mock("fixed", gw.fixed_text("one two three"), prompt_rate=0.001, token_rate=0.5)
    r = g.generate(gw.ModelConfig("fixed"), "sys", "user text")
    assert r.text == "one two three"
    assert r.eval_seconds == pytest.approx(1.5)
    assert r.prompt_eval_seconds == pytest.approx(0.012)
    assert r.completion_tokens == 3 and not r.estimated
    assert g.generate(gw.ModelConfig("fixed"), "sys", "user text") == r


def test_lookup_table_mock():
    g = gw.Gateway()
    g.register_mock("table", gw.lookup_table({"v1": "a"}, default="b"))
    assert g.generate(gw.ModelConfig("table"), "", "", violation_id="v1").text == "a"
    assert g.generate(gw.ModelConfig("table"), "", "", violation_id="v2").text == "b"


def test_failure_modes():
    from graphrepair.repair import parse_response

    eager = parse_response(gw.failure_mode("eager")("", "", None))
    assert len(eager.ops) == 9 and eager.invalid_ops == 3
    indecisive = parse_response(gw.failure_mode("indecisive", {"v": "rc"})("", "", "v"))
    assert indecisive.n_blocks == 2
    hallucinating = parse_response(gw.failure_mode("hallucinating", {"v": "rc"})("", "", "v"))
    assert [op.op_code for op in hallucinating.ops] == ["DEL_EDGE", "UPD_NODE"]
    with pytest.raises(ValueError):
        gw.failure_mode("sleepy")


def test_duplicate_and_unknown():
    g = gw.Gateway()
    g.register_mock("m", gw.echo())
    with pytest.raises(gw.DuplicateName):
        g.register_mock("m", gw.echo())
    with pytest.raises(gw.UnknownModel):
        g.generate(gw.ModelConfig("x", mock="nope"), "", "")


def test_mock_returning_non_text():
    g = gw.Gateway()
    g.register_mock("bad", lambda s, u, v: None)
    with pytest.raises(gw.MalformedBackendResponse):
        g.generate(gw.ModelConfig("bad"), "", "")


@pytest.mark.parametrize("kwargs", [{"temperature": 2.5}, {"temperature": -0.1}, {"timeout": 0}, {"retries": -1}])
def test_model_config_validation(kwargs):
    with pytest.raises(ValueError):
        gw.ModelConfig("m", **kwargs)


def test_model_config_from_dict():
    cfg = gw.ModelConfig.from_dict({"name": "phi4", "temperature": 0.4, "model": "phi4:14b"})
    assert cfg.backend_model == "phi4:14b"
    with pytest.raises(ValueError):
        gw.ModelConfig.from_dict({"name": "x", "colour": "red"})


def test_generation_result_validation():
    with pytest.raises(ValueError):
        gw.GenerationResult("t", "m", eval_seconds=-1)
    with pytest.raises(ValueError):
        gw.GenerationResult("t", "m", completion_tokens=-1)


def test_http_native_telemetry():
    backend = FakeBackend(lambda p: "alpha beta")
    with serve(backend) as url:
        cfg = gw.ModelConfig("llama3.2", endpoint=url, max_tokens=64)
        r = gw.Gateway().generate(cfg, "the system", "the user")
    assert r.text == "alpha beta"
    assert r.prompt_eval_seconds == pytest.approx(0.25)
    assert r.eval_seconds == pytest.approx(1.5)
    assert r.completion_tokens == 2 and r.prompt_tokens == 2 and not r.estimated
    (payload,) = backend.requests
    assert payload == {
        "model": "llama3.2", "system": "the system", "prompt": "the user", "stream": False,
        "options": {"temperature": 0.4, "num_predict": 64},
    }


def test_http_estimates_when_backend_is_silent():
    backend = FakeBackend(lambda p: "a b c d", native=False)
    with serve(backend) as url:
        r = gw.Gateway().generate(gw.ModelConfig("m", endpoint=url), "s", "u")
    assert r.estimated and r.completion_tokens == 4
    assert r.eval_seconds == pytest.approx(r.wall_seconds)


def test_http_error_status():
    with serve(FakeBackend(status=500)) as url:
        with pytest.raises(gw.HttpError) as info:
            gw.Gateway().generate(gw.ModelConfig("m", endpoint=url, retries=0), "s", "u")
    assert info.value.status == 500


def test_http_retries_then_succeeds():
    backend = FakeBackend(fail_first=2)
    with serve(backend) as url:
        r = gw.Gateway().generate(gw.ModelConfig("m", endpoint=url, retries=2), "s", "u")
    assert "DEL_EDGE" in r.text and len(backend.requests) == 3


def test_malformed_response():
    with serve(FakeBackend(lambda p: b"not json")) as url:
        with pytest.raises(gw.MalformedBackendResponse):
            gw.Gateway().generate(gw.ModelConfig("m", endpoint=url, retries=0), "s", "u")
    with serve(FakeBackend(lambda p: b'{"text": "x"}')) as url:
        with pytest.raises(gw.MalformedBackendResponse):
            gw.Gateway().generate(gw.ModelConfig("m", endpoint=url, retries=0), "s", "u")


def test_unreachable_endpoint():
    cfg = gw.ModelConfig("m", endpoint="http://127.0.0.1:9/api/generate", retries=0, timeout=2)
    with pytest.raises(gw.HttpError):
        gw.Gateway().generate(cfg, "s", "u")


def test_timeout():
    with serve(FakeBackend(delay=1.0)) as url:
        with pytest.raises(gw.GatewayTimeout):
            gw.Gateway().generate(gw.ModelConfig("m", endpoint=url, retries=0, timeout=0.2), "s", "u")


def test_adapter_maps_other_backends(tmp_path):
    (tmp_path / "adapter.yaml").write_text(
        "text: choices.0.text\nprompt_eval_duration: null\neval_duration: timing.eval_ms\n"
        "completion_tokens: usage.completion_tokens\nprompt_tokens: null\nduration_scale: 0.001\n"
    )
    adapter = gw.Adapter.load(tmp_path / "adapter.yaml")
    body = b'{"choices": [{"text": "hi there"}], "timing": {"eval_ms": 300}, "usage": {"completion_tokens": 5}}'
    with serve(FakeBackend(lambda p: body)) as url:
        r = gw.Gateway(adapter=adapter).generate(gw.ModelConfig("m", endpoint=url), "s", "u")
    assert r.text == "hi there" and r.completion_tokens == 5
    assert r.eval_seconds == pytest.approx(0.3) and r.prompt_eval_seconds == 0


def test_endpoint_env_override(monkeypatch):
    monkeypatch.setenv(gw.ENDPOINT_ENV, "http://example.invalid/api")
    assert gw.Gateway().endpoint_for(gw.ModelConfig("m")) == "http://example.invalid/api"
    assert gw.Gateway(endpoint="http://x/y").endpoint_for(gw.ModelConfig("m")) == "http://x/y"
    assert gw.Gateway().endpoint_for(gw.ModelConfig("m", endpoint="http://z")) == "http://z"


@pytest.mark.parametrize("cap", [1, 2])
def test_concurrency_cap(cap):
    backend = FakeBackend(delay=0.05)
    with serve(backend) as url:
        g = gw.Gateway(concurrency=cap)
        cfg = gw.ModelConfig("m", endpoint=url)
        threads = [threading.Thread(target=g.generate, args=(cfg, "s", "u")) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert len(backend.requests) == 6
    assert backend.max_in_flight == cap
