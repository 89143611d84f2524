import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from winseg.data import (
    PreprocessSpec,
    export_heatmap,
    extract_tile,
    load_manifest,
    load_mask,
    merge_tile_predictions,
    plan_tiles,
    preprocess,
    read_container,
    read_heatmap,
    sample_references,
    write_container,
)
from winseg.errors import ContractError, ManifestError


def write_png(path, array):
    os.makedirs(os.path.dirname(str(path)), exist_ok=True)
    Image.fromarray(array).save(str(path))


def gray(h, w, value=128):
    return np.full((h, w, 3), value, dtype=np.uint8)


def make_mvtec_tree(root, categories=("widget",), n_train=2, with_masks=True):
    for cat in categories:
        base = root / cat
        for i in range(n_train):
            write_png(base / "train" / "good" / f"{i:03d}.png", gray(32, 32))
        write_png(base / "test" / "good" / "000.png", gray(32, 32))
        write_png(base / "test" / "dent" / "000.png", gray(32, 32))
        if with_masks:
            mask = np.zeros((32, 32), dtype=np.uint8)
            mask[4:8, 4:8] = 255
            write_png(base / "ground_truth" / "dent" / "000_mask.png", mask)
    return str(root)


class TestMvtecManifest:
    def test_toy_tree(self, tmp_path):
        manifest = load_manifest(make_mvtec_tree(tmp_path), "mvtec")
        cat = manifest.category("widget")
        assert len(cat.train_normal) == 2
        assert len(cat.test) == 2
        labels = sorted(t.label for t in cat.test)
        assert labels == ["anomalous", "normal"]
        anomalous = [t for t in cat.test if t.label == "anomalous"][0]
        assert anomalous.mask_path and os.path.exists(anomalous.mask_path)

    def test_fifteen_categories(self, tmp_path):
        names = tuple(f"cat_{i:02d}" for i in range(15))
        manifest = load_manifest(make_mvtec_tree(tmp_path, categories=names), "mvtec")
        assert len(manifest.categories) == 15

    def test_object_label_from_directory(self, tmp_path):
        manifest = load_manifest(make_mvtec_tree(tmp_path, ("metal_nut",)), "mvtec")
        assert manifest.category("metal_nut").object_label == "metal nut"

    def test_missing_ground_truth_dir(self, tmp_path):
        make_mvtec_tree(tmp_path, with_masks=False)
        with pytest.raises(ManifestError, match="widget"):
            load_manifest(str(tmp_path), "mvtec")

    def test_missing_single_mask_lists_file(self, tmp_path):
        make_mvtec_tree(tmp_path)
        write_png(tmp_path / "widget" / "test" / "dent" / "001.png", gray(32, 32))
        with pytest.raises(ManifestError, match="001.png"):
            load_manifest(str(tmp_path), "mvtec")

    def test_unknown_layout_and_missing_root(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(str(tmp_path / "nope"), "mvtec")
        make_mvtec_tree(tmp_path)
        with pytest.raises(ManifestError):
            load_manifest(str(tmp_path), "other")

    def test_unknown_category_rejected(self, tmp_path):
        manifest = load_manifest(make_mvtec_tree(tmp_path), "mvtec")
        with pytest.raises(ManifestError):
            manifest.category("missing")


class TestVisaManifest:
    def make_tree(self, root):
        img_dir = root / "images"
        rows = ["object,split,label,image,mask"]
        for i in range(3):
            write_png(root / "images" / f"train_{i}.png", gray(16, 16))
            rows.append(f"candle,train,normal,images/train_{i}.png,")
        write_png(root / "images" / "good.png", gray(16, 16))
        rows.append("candle,test,normal,images/good.png,")
        write_png(root / "images" / "bad.png", gray(16, 16))
        write_png(root / "masks" / "bad.png",
                  np.where(np.eye(16, dtype=bool), 255, 0).astype(np.uint8))
        rows.append("candle,test,anomaly,images/bad.png,masks/bad.png")
        os.makedirs(root / "split_csv", exist_ok=True)
        (root / "split_csv" / "1cls.csv").write_text("\n".join(rows) + "\n")
        assert img_dir.exists()
        return str(root)

    def test_parse(self, tmp_path):
        manifest = load_manifest(self.make_tree(tmp_path), "visa")
        cat = manifest.category("candle")
        assert len(cat.train_normal) == 3
        assert len(cat.test) == 2
        assert {t.label for t in cat.test} == {"normal", "anomalous"}

    def test_missing_split_file(self, tmp_path):
        os.makedirs(tmp_path / "x")
        with pytest.raises(ManifestError):
            load_manifest(str(tmp_path), "visa")


class TestPreprocess:
    def test_standardization_values(self, tmp_path):
        spec = PreprocessSpec(target=16)
        path = tmp_path / "img.png"
        write_png(path, gray(16, 16, value=123))
        out = preprocess(str(path), spec)
        expected = (123 / 255.0 - np.array(spec.mean)) / np.array(spec.std)
        for c in range(3):
            assert np.allclose(out.tensor[c], expected[c], atol=1e-6)
        # channel-0 mean is close to the raw value 0.48145466 * 255 ~ 122.8
        assert abs(out.tensor[0]).max() < 0.01

    def test_exact_halving(self, tmp_path):
        path = tmp_path / "img.png"
        write_png(path, gray(480, 480))
        out = preprocess(str(path), PreprocessSpec(target=240))
        assert out.tensor.shape == (3, 240, 240)
        assert out.original_size == (480, 480)

    def test_aspect_preserved(self, tmp_path):
        path = tmp_path / "img.png"
        write_png(path, gray(1000, 1500))
        out = preprocess(str(path), PreprocessSpec(target=240))
        assert out.tensor.shape == (3, 240, 360)
        assert out.original_size == (1000, 1500)

    def test_deterministic(self, tmp_path):
        path = tmp_path / "img.png"
        rng = np.random.default_rng(0)
        write_png(path, rng.integers(0, 256, size=(100, 80, 3)).astype(np.uint8))
        a = preprocess(str(path), PreprocessSpec(target=48))
        b = preprocess(str(path), PreprocessSpec(target=48))
        assert np.array_equal(a.tensor, b.tensor)

    def test_undecodable_raises_oserror(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(OSError):
            preprocess(str(path))

    def test_mask_binarization(self, tmp_path):
        path = tmp_path / "mask.png"
        arr = np.array([[0, 127, 128, 255]], dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(str(path))
        assert load_mask(str(path)).tolist() == [[False, False, True, True]]


class TestTiling:
    def test_square_single_tile(self):
        plan = plan_tiles((240, 240))
        assert plan.n_tiles == 1
        assert plan.boxes == ((0, 0, 240, 240),)

    def test_240_360(self):
        plan = plan_tiles((240, 360))
        assert plan.n_tiles == 2
        assert [b[1] for b in plan.boxes] == [0, 120]
        assert all(b[3] - b[1] == 240 and b[2] - b[0] == 240 for b in plan.boxes)

    def test_240_720(self):
        plan = plan_tiles((240, 720))
        assert plan.n_tiles == 4
        assert [b[1] for b in plan.boxes] == [0, 160, 320, 480]

    def test_tall_image_tiles_vertically(self):
        plan = plan_tiles((360, 240))
        assert [b[0] for b in plan.boxes] == [0, 120]

    @settings(max_examples=100, deadline=None)
    @given(short=st.integers(16, 300), ratio=st.floats(1.0, 4.0))
    def test_coverage_and_overlap_invariants(self, short, ratio):
        long_edge = int(short * ratio)
        plan = plan_tiles((short, max(long_edge, short)))
        h, w = plan.dims
        side = plan.side
        cover = np.zeros(w, dtype=int)
        anchors = []
        for top, left, bottom, right in plan.boxes:
            assert bottom - top == side and right - left == side
            cover[left:right] += 1
            anchors.append(left)
        assert cover.min() >= 1, "uncovered pixels"
        for a, b in zip(anchors, anchors[1:]):
            overlap = side - (b - a)
            assert overlap >= 0.2 * side - 1e-9

    def test_invalid_side(self):
        with pytest.raises(ContractError):
            plan_tiles((240, 360), side=500)


class TestMergeTiles:
    def test_single_tile_identity(self):
        plan = plan_tiles((4, 4))
        tile = np.arange(16, dtype=float).reshape(4, 4) / 16.0
        merged, score = merge_tile_predictions([tile], [0.7], plan)
        assert np.array_equal(merged, tile)
        assert score == pytest.approx(0.7)

    def test_overlap_mean(self):
        plan = plan_tiles((4, 6))
        assert plan.n_tiles == 2
        maps = [np.full((4, 4), 0.2), np.full((4, 4), 0.4)]
        merged, score = merge_tile_predictions(maps, [0.1, 0.9], plan)
        assert score == pytest.approx(0.5)
        left_only = merged[:, :plan.boxes[1][1]]
        assert np.allclose(left_only, 0.2)
        overlap = merged[:, plan.boxes[1][1]:plan.boxes[0][3]]
        assert np.allclose(overlap, 0.3)
        right_only = merged[:, plan.boxes[0][3]:]
        assert np.allclose(right_only, 0.4)

    def test_extract_tile(self):
        tensor = np.arange(2 * 4 * 6, dtype=float).reshape(2, 4, 6)
        tile = extract_tile(tensor, (0, 2, 4, 6))
        assert tile.shape == (2, 4, 4)
        assert np.array_equal(tile, tensor[:, 0:4, 2:6])

    def test_wrong_count_rejected(self):
        plan = plan_tiles((4, 6))
        with pytest.raises(ContractError):
            merge_tile_predictions([np.zeros((4, 4))], [0.5], plan)

    def test_wrong_shape_rejected(self):
        plan = plan_tiles((4, 4))
        with pytest.raises(ContractError):
            merge_tile_predictions([np.zeros((2, 2))], [0.5], plan)


class TestSampleReferences:
    def make_manifest(self, tmp_path, n=10):
        return load_manifest(make_mvtec_tree(tmp_path, n_train=n), "mvtec")

    def test_full_set(self, tmp_path):
        manifest = self.make_manifest(tmp_path, n=5)
        refs = sample_references(manifest, "widget", 5, seed=0)
        assert sorted(refs) == sorted(manifest.category("widget").train_normal)

    def test_deterministic(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        a = sample_references(manifest, "widget", 3, seed=42)
        b = sample_references(manifest, "widget", 3, seed=42)
        assert a == b

    def test_seeds_vary_selection(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        picks = {tuple(sample_references(manifest, "widget", 1, seed=s))
                 for s in range(5)}
        assert len(picks) >= 2

    def test_k_bounds(self, tmp_path):
        manifest = self.make_manifest(tmp_path, n=3)
        with pytest.raises(ContractError):
            sample_references(manifest, "widget", 4, seed=0)
        with pytest.raises(ContractError):
            sample_references(manifest, "widget", 0, seed=0)


class TestHeatmap:
    def test_extreme_values(self, tmp_path):
        path = str(tmp_path / "map.png")
        export_heatmap(np.array([[1.0, 0.0]]), path)
        assert read_heatmap(path).tolist() == [[65535, 0]]

    def test_round_half_up(self, tmp_path):
        path = str(tmp_path / "map.png")
        export_heatmap(np.array([[0.5]]), path)
        assert read_heatmap(path)[0, 0] == 32768

    def test_monotone(self, tmp_path, rng):
        path = str(tmp_path / "map.png")
        values = np.sort(rng.uniform(0, 1, size=64)).reshape(1, 64)
        export_heatmap(values, path)
        pixels = read_heatmap(path)[0]
        assert np.all(np.diff(pixels.astype(np.int64)) >= 0)

    def test_range_checked(self, tmp_path):
        with pytest.raises(ContractError):
            export_heatmap(np.array([[1.5]]), str(tmp_path / "x.png"))


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        path = str(tmp_path / "tensors.wctf")
        tensors = {
            "a": rng.standard_normal((3, 4)).astype(np.float32),
            "nested.name": rng.standard_normal(7).astype(np.float32),
            "scalarish": np.float32(3.25).reshape(()),
        }
        write_container(path, tensors)
        loaded = read_container(path)
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            assert loaded[name].dtype == np.float32
            assert np.array_equal(loaded[name], np.asarray(arr, dtype=np.float32))

    def test_magic_guard(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTME" + b"\x00" * 16)
        with pytest.raises(ContractError):
            read_container(str(path))

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "t.wctf")
        write_container(path, {"x": np.zeros(2, dtype=np.float32)})
        blob = open(path, "rb").read()
        assert blob.startswith(b"WCTF1")
        import json as json_mod
        import struct

        (length,) = struct.unpack("<I", blob[5:9])
        manifest = json_mod.loads(blob[9:9 + length])
        assert manifest == {"x": {"dtype": "f32", "shape": [2], "offset": 0}}
