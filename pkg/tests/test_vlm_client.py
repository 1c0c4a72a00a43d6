import base64
import io
import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from PIL import Image

from carma.errors import BackendError, BackendUnavailable, IoError
from carma.memory import MemoryStore
from carma.model import ActorClass, ReasonerConfig
from carma.reasoner import PromptBlock, PromptSpec, assemble_prompt
from carma.trigger import TriggerEvent
from carma.vlm_client import EndpointConfig, VLMBackend, build_request, dispatch, load_image

from conftest import GOLDEN_DIR, person

SECRET = "sk-test-0123456789abcdef"
REPLY = "{'object': 'object_1', 'action': 'pick_up', 'robot_interaction': false}"


class MockEndpoint:
    """Tiny chat-completions server. ``script`` is a list of (status, delay_s) per request."""

    def __init__(self, script=None):
        self.script = list(script or [])
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests.append({"path": self.path, "headers": dict(self.headers),
                                       "body": json.loads(body)})
                status, delay = outer.script.pop(0) if outer.script else (200, 0.0)
                if delay:
                    time.sleep(delay)
                if status == 200:
                    payload = {"choices": [{"message": {"role": "assistant", "content": REPLY}}]}
                else:
                    payload = {"error": f"boom, key was {SECRET}"}
                data = json.dumps(payload).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def seven_image_prompt() -> PromptSpec:
    """Three objects plus four person crops, no robot hand."""
    mem = MemoryStore()
    for k in range(3):
        mem.register_object(f"frames/scene.png#{40 + 60 * k},300,50,50", (0.1 * k, 0.3, 1.0), 0.0)
    p = mem.register_actor(ActorClass.HUMAN, 0.0)
    for k in range(4):
        mem.append_person_crop(p, f"frames/scene.png#{100 + 4 * k},50,80,160", 0.5 * (k + 1))
    return assemble_prompt(mem, TriggerEvent(p, 2.0), ReasonerConfig("trigger_only"))


def image_parts(body):
    return [p for p in body["messages"][0]["content"] if p["type"] == "image_url"]


def decode(part):
    url = part["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    return Image.open(io.BytesIO(base64.b64decode(url.split(",", 1)[1])))


def test_wire_request_has_seven_images_in_order(caplog):
    prompt = seven_image_prompt()
    with MockEndpoint() as ep, caplog.at_level(logging.DEBUG):
        cfg = EndpointConfig(base_url=ep.url, api_key=SECRET)
        assert dispatch(prompt, cfg, GOLDEN_DIR) == REPLY
    (req,) = ep.requests
    assert req["path"] == "/v1/chat/completions"
    assert req["headers"]["Authorization"] == f"Bearer {SECRET}"
    body = req["body"]
    assert body["temperature"] == 0 and body["model"] == "gpt-4o"
    assert len(body["messages"]) == 1 and body["messages"][0]["role"] == "user"
    parts = body["messages"][0]["content"]
    assert len(image_parts(body)) == 7
    # every image is preceded by its caption, in block order
    captions = [parts[i - 1]["text"] for i, p in enumerate(parts) if p["type"] == "image_url"]
    assert captions == [b.caption for b in prompt.images]
    # crops are applied: object crops are 50x50, person crops 80x160
    sizes = [decode(p).size for p in image_parts(body)]
    assert sizes == [(50, 50)] * 3 + [(80, 160)] * 4
    assert parts[0]["text"] == prompt.blocks[0].text and parts[-1]["text"] == prompt.blocks[-1].text
    assert SECRET not in caplog.text


def test_request_is_deterministic():
    prompt = seven_image_prompt()
    cfg = EndpointConfig(api_key=SECRET)
    assert build_request(prompt, cfg, GOLDEN_DIR) == build_request(prompt, cfg, GOLDEN_DIR)


def test_http_500_twice_raises_after_two_attempts(caplog):
    with MockEndpoint([(500, 0), (500, 0)]) as ep, caplog.at_level(logging.DEBUG):
        cfg = EndpointConfig(base_url=ep.url, api_key=SECRET, max_retries=1)
        with pytest.raises(BackendError) as info:
            dispatch(seven_image_prompt(), cfg, GOLDEN_DIR)
    assert len(ep.requests) == 2
    assert info.value.status == 500
    assert SECRET not in str(info.value) and SECRET not in info.value.body
    assert SECRET not in caplog.text


def test_retry_recovers():
    with MockEndpoint([(503, 0)]) as ep:
        cfg = EndpointConfig(base_url=ep.url, max_retries=1)
        assert dispatch(seven_image_prompt(), cfg, GOLDEN_DIR) == REPLY
    assert len(ep.requests) == 2


def test_timeout_is_backend_unavailable():
    with MockEndpoint([(200, 1.0)]) as ep:
        cfg = EndpointConfig(base_url=ep.url, timeout=0.2, max_retries=0)
        with pytest.raises(BackendUnavailable):
            dispatch(seven_image_prompt(), cfg, GOLDEN_DIR)


def test_unreachable_endpoint():
    cfg = EndpointConfig(base_url="http://127.0.0.1:9", timeout=1.0, max_retries=0, api_key=SECRET)
    with pytest.raises(BackendUnavailable) as info:
        dispatch(seven_image_prompt(), cfg, GOLDEN_DIR)
    assert SECRET not in str(info.value)


def test_unreadable_image_fails_before_dispatch(tmp_path):
    spec = PromptSpec((PromptBlock.of_text("intro"), PromptBlock.of_image("object_1", "missing.png"),
                       PromptBlock.of_text("task")), person(1), ReasonerConfig())
    with MockEndpoint() as ep:
        with pytest.raises(IoError):
            dispatch(spec, EndpointConfig(base_url=ep.url), tmp_path)
    assert ep.requests == []


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        build_request(PromptSpec((), person(1), ReasonerConfig()), EndpointConfig())


def test_images_are_downscaled(tmp_path):
    Image.new("RGB", (2000, 1000), (10, 20, 30)).save(tmp_path / "big.png")
    img = Image.open(io.BytesIO(load_image("big.png", 512, tmp_path)))
    assert img.size == (512, 256)
    with pytest.raises(IoError):
        load_image("big.png#1,2", 512, tmp_path)


def test_key_from_environment_and_hidden_in_repr(monkeypatch):
    monkeypatch.setenv("CARMA_API_KEY", SECRET)
    cfg = EndpointConfig.from_env(model="m")
    assert cfg.api_key == SECRET and SECRET not in repr(cfg)
    with pytest.raises(ValueError):
        EndpointConfig(timeout=0)
    with pytest.raises(ValueError):
        EndpointConfig(max_retries=-1)


def test_in_flight_requests_are_bounded():
    with MockEndpoint([(200, 0.3)] * 6) as ep:
        be = VLMBackend(EndpointConfig(base_url=ep.url, max_in_flight=2), GOLDEN_DIR)
        active, peak, lock = [0], [0], threading.Lock()
        orig = be._client.post

        def counting_post(*a, **kw):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            try:
                return orig(*a, **kw)
            finally:
                with lock:
                    active[0] -= 1

        be._client.post = counting_post
        prompt = seven_image_prompt()
        threads = [threading.Thread(target=be.dispatch, args=(prompt,)) for _ in range(6)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        be.close()
    assert len(ep.requests) == 6 and peak[0] == 2
