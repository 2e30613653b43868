import json
import sys
import threading
import time

import numpy as np
import pytest

from togkit.backends import (
    BackendSet,
    Concurrency,
    ExternalBackend,
    Frame,
    GroundTruth,
    Kind,
    Mode,
    NoiseConfig,
    OracleBackend,
    build_backends,
    load_config,
    oracle_backends,
)
from togkit.backends import wire
from togkit.backends.base import AffordanceQuery, Serialized
from togkit.backends.oracle import jitter_mask
from togkit.dataset import load_dataset
from togkit.errors import (
    BackendFailure,
    BackendTimeout,
    ConfigError,
    MissingAffordance,
    ProcessExit,
    ProtocolError,
    UnmappableCrop,
)
from togkit.eval import grasp_success
from togkit.maskops import mask_iou
from togkit.pipeline import crop_transform_for

from .conftest import ROOT

MINI = ROOT / "tests" / "fixtures" / "mini" / "manifest.json"
STUB = [sys.executable, "-m", "togkit.backends.stub"]


@pytest.fixture(scope="module")
def mini():
    return load_dataset(MINI)


@pytest.fixture(scope="module")
def scene(mini):
    s = mini.scenes[0]
    return s, Frame(s.load_image(), f"scene:{s.image_id}", s.image_path)


# --- oracle -----------------------------------------------------------------


class TestOracleSegment:
    def test_noiseless_is_ground_truth(self, mini, scene):
        s, f = scene
        out = OracleBackend.from_dataset(mini).segment(f)
        assert len(out) == len(s.objects)
        for m, o in zip(out, s.objects):
            assert np.array_equal(m, o.mask)

    def test_fragments_are_subsets(self, mini):
        s = mini.scenes[0]
        one = GroundTruth({"k": GroundTruth.from_dataset(mini).frames[f"scene:{s.image_id}"][:1]})
        out = OracleBackend(one, NoiseConfig(fragments=2), seed=3).segment(Frame(None, "k"))
        assert len(out) == 3
        parent = s.objects[0].mask
        assert np.array_equal(out[0], parent)
        for frag in out[1:]:
            assert frag.any() and not (frag & ~parent).any()
            assert frag.sum() < parent.sum()

    def test_dropout_one(self, mini, scene):
        assert OracleBackend.from_dataset(mini, NoiseConfig(dropout=1.0)).segment(scene[1]) == []

    def test_blobs_avoid_objects(self, mini, scene):
        s, f = scene
        out = OracleBackend.from_dataset(mini, NoiseConfig(blobs=2)).segment(f)
        occ = np.logical_or.reduce([o.mask for o in s.objects])
        small, large = out[-2], out[-1]
        assert not (small & occ).any() and small.sum() <= 18 * 18
        assert not (large & occ).any() and large.sum() > 50_000

    def test_seeded(self, mini, scene):
        noise = NoiseConfig(dropout=0.3, fragments=1, blobs=1, mask_jitter=2)
        a = OracleBackend.from_dataset(mini, noise, seed=1).segment(scene[1])
        b = OracleBackend.from_dataset(mini, noise, seed=1).segment(scene[1])
        assert len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_noise_config_checks(self):
        with pytest.raises(ConfigError):
            NoiseConfig(dropout=1.5)
        with pytest.raises(ConfigError):
            NoiseConfig(embed_sigma=-1)
        with pytest.raises(ConfigError):
            NoiseConfig.from_json({"dropuot": 0.1})
        assert NoiseConfig().is_zero
        assert NoiseConfig.from_json(NoiseConfig(blobs=3).to_json()) == NoiseConfig(blobs=3)


class TestOracleEmbed:
    def test_same_subcategory_cosine_one(self, mini, scene):
        s, f = scene
        o = OracleBackend.from_dataset(mini)
        for obj in s.objects:
            img = o.embed_image(None, f, obj.mask)
            txt = o.embed_text(mini.entry(obj.object_id).description)
            assert float(img @ txt) == pytest.approx(1.0)

    def test_different_subcategories_small_cosine(self, mini):
        o = OracleBackend.from_dataset(mini)
        ids = o.gt.object_ids
        vs = np.stack([o.embed_text(mini.entry(i).description) for i in ids])
        g = vs @ vs.T
        off = g[~np.eye(len(ids), dtype=bool)]
        assert np.abs(off).max() < 0.3

    def test_background_unmappable(self, mini, scene):
        s, f = scene
        bg = ~np.logical_or.reduce([o.mask for o in s.objects])
        with pytest.raises(UnmappableCrop):
            OracleBackend.from_dataset(mini).embed_image(None, f, bg)

    def test_classifier_logits(self, mini, scene):
        s, f = scene
        o = OracleBackend.from_dataset(mini)
        y = o.classify([], f, [obj.mask for obj in s.objects])
        for i, obj in enumerate(s.objects):
            assert int(np.argmax(y[i])) == o.labels.index(obj.object_id)


class TestOracleAffordance:
    def _query(self, f, obj, aff, pol):
        t = crop_transform_for(obj.mask)
        return AffordanceQuery(f, obj.mask, t, aff, pol), t

    def test_noiseless_exact(self, mini, scene):
        s, f = scene
        obj = s.object("hammer_01")
        q, t = self._query(f, obj, "grasp", "avoid")
        out = OracleBackend.from_dataset(mini).predict_oneshot(None, None, None, q)
        assert np.array_equal(out, t.crop(obj.mask & ~obj.affordances["grasp"]))

    def test_jitter_iou(self, mini):
        o = OracleBackend.from_dataset(mini, NoiseConfig(mask_jitter=2), seed=4)
        for s in mini.scenes:
            f = Frame(None, f"scene:{s.image_id}")
            for obj in s.objects:
                for aff in obj.affordances:
                    q, t = self._query(f, obj, aff, "require")
                    got = t.uncrop(o.predict_oneshot(None, None, None, q), *obj.mask.shape)
                    assert mask_iou(got, obj.mask & obj.affordances[aff]) >= 0.8

    def test_missing_affordance(self, mini, scene):
        s, f = scene
        q, _ = self._query(f, s.object("cable_01"), "paint", "avoid")
        with pytest.raises(MissingAffordance):
            OracleBackend.from_dataset(mini).predict_oneshot(None, None, None, q)

    def test_segment_affordances(self, mini, scene):
        s, f = scene
        preds = OracleBackend.from_dataset(mini).segment_affordances(f)
        assert len(preds) == sum(len(o.affordances) for o in s.objects)
        assert all(p.confidence == 0.9 for p in preds)

    def test_jitter_band(self):
        r = np.random.default_rng(0)
        m = np.zeros((40, 40), bool)
        m[10:30, 10:30] = True
        j = jitter_mask(m, 2, r)
        diff = j ^ m
        ys, xs = np.nonzero(diff)
        # every flipped pixel lies within 2 px of the boundary
        assert diff.any()
        assert ((np.minimum(np.abs(ys - 9.5), np.abs(ys - 29.5)) <= 2.5) | (np.minimum(np.abs(xs - 9.5), np.abs(xs - 29.5)) <= 2.5)).all()


class TestOracleGrasps:
    def test_noiseless_pass_own_rule(self, mini, scene):
        s, f = scene
        props = OracleBackend.from_dataset(mini).propose(f)
        gts = [g for o in s.objects for g in o.grasps]
        assert len(props) == len(gts)
        for p, g in zip(props, gts):
            assert (p.x, p.y, p.w, p.h, p.theta) == (g.x, g.y, g.w, g.h, g.theta)
            assert grasp_success(p, [g])
            assert 0.5 <= p.confidence <= 1.0

    def test_jitter_within_rule(self, mini):
        o = OracleBackend.from_dataset(mini, NoiseConfig(grasp_jitter_px=3, grasp_jitter_deg=5), seed=2)
        for s in mini.scenes:
            gts = [g for ob in s.objects for g in ob.grasps]
            for p, g in zip(o.propose(Frame(None, f"scene:{s.image_id}")), gts):
                assert grasp_success(p, [g])

    def test_no_grasps(self, mini):
        gt = GroundTruth.from_dataset(mini)
        obj = gt.frames[f"scene:{mini.scenes[0].image_id}"][0]
        bare = GroundTruth({"k": [type(obj)(obj.object_id, obj.category, obj.mask, {}, [])]})
        assert OracleBackend(bare).propose(Frame(None, "k")) == []


# --- sets and config --------------------------------------------------------


class TestBackendSet:
    def test_check_mode(self, mini):
        o = OracleBackend.from_dataset(mini)
        b = BackendSet({Kind.SEGMENTER: o})
        with pytest.raises(ConfigError):
            b.check_mode(Mode.BINARY)
        for m in Mode:
            oracle_backends(mini).check_mode(m)

    def test_serialize_wraps(self, mini):
        o = OracleBackend.from_dataset(mini)
        b = BackendSet({Kind.SEGMENTER: o}, {Kind.SEGMENTER: Concurrency.SERIALIZE_CALLS})
        assert isinstance(b.get(Kind.SEGMENTER), Serialized)
        with pytest.raises(ConfigError):
            b.get(Kind.CLASSIFIER)

    def test_serialized_excludes_overlap(self):
        active, peak = [0], [0]
        lock = threading.Lock()

        class Slow:
            def work(self):
                with lock:
                    active[0] += 1
                    peak[0] = max(peak[0], active[0])
                time.sleep(0.01)
                with lock:
                    active[0] -= 1

        s = Serialized(Slow())
        ts = [threading.Thread(target=s.work) for _ in range(8)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert peak[0] == 1

    def test_build_oracle_config(self, mini):
        b = build_backends({"seed": 3, "noise": {"dropout": 0.5}}, dataset=mini)
        seg = b.get(Kind.SEGMENTER)
        assert seg.seed == 3 and seg.noise.dropout == 0.5
        assert b.get(Kind.CLASSIFIER) is seg  # same settings share one instance
        b2 = build_backends({"kinds": {"segmenter": {"noise": {"blobs": 1}}}}, dataset=mini)
        assert b2.get(Kind.SEGMENTER) is not b2.get(Kind.CLASSIFIER)

    def test_config_errors(self, mini, tmp_path):
        with pytest.raises(ConfigError):
            build_backends({"bogus": 1}, dataset=mini)
        with pytest.raises(ConfigError):
            build_backends({"kinds": {"nope": {}}}, dataset=mini)
        with pytest.raises(ConfigError):
            build_backends({"transport": "external"}, dataset=mini)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_env_default(self, tmp_path, monkeypatch):
        p = tmp_path / "b.json"
        p.write_text(json.dumps({"seed": 9}))
        monkeypatch.setenv("TOGKIT_BACKEND", str(p))
        assert load_config()["seed"] == 9
        monkeypatch.delenv("TOGKIT_BACKEND")
        assert load_config() == {}


# --- wire format and external process --------------------------------------


class TestWire:
    def test_parse(self):
        assert wire.parse_response('{"id":1,"ok":true}') == {"id": 1, "ok": True}
        for bad in ("nope", "[]", '{"ok":true}', '{"id":"1","ok":true}', '{"id":1}', '{"id":true,"ok":true}'):
            with pytest.raises(ProtocolError):
                wire.parse_response(bad)

    def test_mask_round_trip_local(self, rng):
        for enc in ("bits", "rle"):
            for _ in range(50):
                m = rng.random((int(rng.integers(1, 30)), int(rng.integers(1, 30)))) < 0.5
                assert np.array_equal(wire.mask_in(wire.mask_out(m, enc)), m)


@pytest.fixture
def stub():
    b = ExternalBackend(STUB, timeout=5)
    yield b
    b.close()


class TestExternal:
    def test_handshake(self, stub):
        assert stub.kinds == ("segmenter",)
        assert stub.concurrent is False

    def test_ping(self, stub):
        assert stub.call("ping") == {}

    def test_raw_ping_frame(self):
        import subprocess

        p = subprocess.run(STUB, input='{"id":1,"op":"ping"}\n', capture_output=True, text=True, timeout=30)
        assert json.loads(p.stdout) == {"id": 1, "ok": True}

    def test_ids_increase(self, stub):
        for want in range(1, 4):
            assert stub.call("echo", {"n": want}) == {"n": want}
        assert next(stub._ids) == 4

    def test_segment(self, stub, mini):
        s = mini.scenes[0]
        masks = stub.segment(Frame(s.load_image(), f"scene:{s.image_id}", s.image_path))
        assert len(masks) == 2
        assert masks[0].shape == (480, 640)
        assert masks[0][:240, :320].all() and masks[0].sum() == 240 * 320
        assert masks[1][240:, 320:].all() and masks[1].sum() == 240 * 320

    def test_mask_round_trips(self, stub, rng):
        for i in range(500):
            m = rng.random((int(rng.integers(1, 40)), int(rng.integers(1, 40)))) < rng.random()
            enc = "bits" if i % 2 else "rle"
            back = stub.call("echo", {"mask": wire.mask_out(m, enc)})["mask"]
            assert np.array_equal(wire.mask_in(back), m)

    def test_id_mismatch(self, stub):
        with pytest.raises(ProtocolError):
            stub.call("bad_id")

    def test_garbage_line(self, stub):
        with pytest.raises(ProtocolError):
            stub.call("garbage")

    def test_failure_response(self, stub):
        with pytest.raises(BackendFailure) as ei:
            stub.call("no_such_op")
        assert not isinstance(ei.value, (BackendTimeout, ProtocolError))

    def test_timeout_then_recovers(self):
        with ExternalBackend(STUB, timeout=0.3) as b:
            t0 = time.monotonic()
            with pytest.raises(BackendTimeout):
                b.call("sleep", {"seconds": 1.0})
            assert time.monotonic() - t0 < 0.9
            time.sleep(1.0)  # late reply arrives and is dropped
            assert b.call("ping") == {}

    def test_process_exit(self, stub):
        with pytest.raises(ProcessExit):
            stub.call("exit")
        with pytest.raises(ProcessExit):
            stub.call("ping")

    def test_bad_command(self):
        with pytest.raises(OSError):
            ExternalBackend(["/nonexistent/binary"])

    def test_pipelined_when_concurrent(self):
        with ExternalBackend(STUB, timeout=5, concurrent=True) as b:
            out = [None] * 20

            def go(i):
                out[i] = b.call("echo", {"i": i})["i"]

            ts = [threading.Thread(target=go, args=(i,)) for i in range(20)]
            for t in ts:
                t.start()
            for t in ts:
                t.join()
            assert out == list(range(20))

    def test_config_external(self, mini):
        b = build_backends({"transport": "external", "command": STUB, "timeout": 5})
        try:
            assert b.has(Kind.SEGMENTER) and not b.has(Kind.CLASSIFIER)
            assert isinstance(b.get(Kind.SEGMENTER), Serialized)
        finally:
            b.close()
