import filecmp

import numpy as np
import pytest

from physio_forge.data import load_dataset, load_inputs
from physio_forge.errors import FormatError, ManifestError, ParameterError
from physio_forge.mapio import read_map
from physio_forge.rppg_maps import global_signal
from physio_forge.synthbench import (
    BenchmarkSpec,
    DomainSpec,
    SampleSpec,
    default_domains,
    gen_appearance_patch,
    gen_attack_trace,
    gen_bonafide_trace,
    gen_dataset,
    gen_trace,
    make_sample,
)

DOMAIN = default_domains()["spoof"]["intra"][0]
QUIET = DomainSpec("quiet", noise_sigma=0.0, illumination_drift=0.0)


def band_power(signal, fps=30.0, lo=0.7, hi=3.0):
    power = np.abs(np.fft.rfft(signal - signal.mean())) ** 2
    freqs = np.fft.rfftfreq(signal.size, 1.0 / fps)
    keep = (freqs >= lo) & (freqs <= hi)
    return freqs[keep], power[keep]


def prominence(trace, bpm):
    """Largest band bin next to the carrier, relative to the band median."""
    freqs, power = band_power(global_signal(trace, trace.n_frames).samples)
    k = int(np.argmin(np.abs(freqs - bpm / 60.0)))
    return power[k - 1 : k + 2].max() / np.median(power)


def half_mean_gap(patch):
    m = patch.mean(axis=2)
    half = m.shape[1] // 2
    return abs(m[:, :half].mean() - m[:, half:].mean())


def high_freq_energy(patch):
    power = np.abs(np.fft.fft2(patch - patch.mean(axis=(0, 1)), axes=(0, 1))) ** 2
    f = np.abs(np.fft.fftfreq(patch.shape[0]))
    mask = (f[:, None] > 0.25) | (f[None, :] > 0.25)
    return power[mask].sum()


class TestSpecs:
    def test_domain_validation(self):
        with pytest.raises(ParameterError):
            DomainSpec("x", fps=0)
        with pytest.raises(ParameterError):
            DomainSpec("x", noise_sigma=-1)

    def test_shifted_domain(self):
        d = DomainSpec("a", noise_sigma=0.2, illumination_drift=0.5)
        s = d.shifted("b", (0.1, 0.0, 0.0))
        assert (s.name, s.noise_sigma, s.illumination_drift, s.tint) == ("b", pytest.approx(0.6), 1.0, (0.1, 0.0, 0.0))

    @pytest.mark.parametrize("kw", [{"cls": "deepfake"}, {"bpm": 47.9}, {"bpm": 151.0}])
    def test_sample_validation(self, kw):
        with pytest.raises(ParameterError):
            SampleSpec(**{"cls": "bonafide", "task": "spoof", "seed": 0, **kw})

    def test_wrong_generator(self):
        with pytest.raises(ParameterError):
            gen_attack_trace(SampleSpec("bonafide", "spoof", 0), DOMAIN)
        with pytest.raises(ParameterError):
            gen_bonafide_trace(SampleSpec("spoof", "spoof", 0), DOMAIN)


class TestBonafide:
    def test_dominant_bin_every_region(self):
        trace = gen_bonafide_trace(SampleSpec("bonafide", "spoof", 3, bpm=72), QUIET)
        freqs = np.fft.rfftfreq(300, 1 / 30.0)
        for region in trace.values:
            g = region[:, 1] - region[:, 1].mean()
            assert freqs[np.argmax(np.abs(np.fft.rfft(g)))] == pytest.approx(1.2)

    def test_exact_cosine_plus_harmonic(self):
        bpm = 83.0
        trace = gen_bonafide_trace(SampleSpec("bonafide", "spoof", 8, bpm=bpm), QUIET)
        t = np.arange(300) / 30.0
        w = 2 * np.pi * bpm / 60.0
        basis = np.stack([np.ones_like(t), np.cos(w * t), np.sin(w * t), np.cos(2 * w * t), np.sin(2 * w * t)], axis=1)
        for region in trace.values:
            coef, *_ = np.linalg.lstsq(basis, region, rcond=None)
            assert np.abs(basis @ coef - region).max() < 1e-10

    def test_deterministic(self):
        spec = SampleSpec("bonafide", "forgery", 21, bpm=100)
        np.testing.assert_array_equal(gen_trace(spec, DOMAIN).values, gen_trace(spec, DOMAIN).values)

    def test_noise_lowers_prominence(self):
        means = []
        for sigma in (0.1, 0.3, 0.9):
            dom = DomainSpec("n", noise_sigma=sigma)
            means.append(np.mean([prominence(gen_trace(SampleSpec("bonafide", "spoof", s, bpm=72), dom), 72) for s in range(60)]))
        assert means[0] > means[1] > means[2]


class TestAttacks:
    def test_spoof_has_no_rhythm(self):
        flat = 0
        for seed in range(100):
            trace = gen_attack_trace(SampleSpec("spoof", "spoof", seed), DOMAIN)
            _, power = band_power(global_signal(trace, 300).samples)
            flat += power.max() <= 3 * np.median(power)
        assert flat >= 95

    def test_forgery_rhythm_diminished_but_present(self):
        dom = default_domains()["forgery"]["intra"][0]
        present = diminished = 0
        for seed in range(100):
            bona = prominence(gen_trace(SampleSpec("bonafide", "forgery", seed, bpm=72), dom), 72)
            forg = prominence(gen_trace(SampleSpec("forgery", "forgery", seed, bpm=72), dom), 72)
            present += forg > 3
            diminished += forg < 0.25 * bona
        assert present >= 95 and diminished >= 95

    @pytest.mark.parametrize("cls", ["spoof", "forgery"])
    def test_deterministic(self, cls):
        spec = SampleSpec(cls, "spoof", 5)
        np.testing.assert_array_equal(gen_trace(spec, DOMAIN).values, gen_trace(spec, DOMAIN).values)

    def test_separability_by_band_energy(self):
        rng = np.random.default_rng(0)
        energy = {"bonafide": [], "spoof": []}
        for seed in range(1000):
            bpm = float(rng.uniform(48, 150))
            for cls in energy:
                g = global_signal(gen_trace(SampleSpec(cls, "spoof", seed, bpm=bpm), DOMAIN), 300).samples
                energy[cls].append(band_power(g)[1].sum())
        scores = np.concatenate([energy["bonafide"], energy["spoof"]])
        labels = np.r_[np.ones(1000), np.zeros(1000)]
        best = max(np.mean((scores >= th) == labels) for th in np.unique(scores))
        assert best >= 0.95


class TestAppearance:
    def test_shape_and_determinism(self):
        spec = SampleSpec("forgery", "forgery", 2)
        a, b = gen_appearance_patch(spec, DOMAIN), gen_appearance_patch(spec, DOMAIN)
        assert a.shape == (32, 32, 3)
        np.testing.assert_array_equal(a, b)

    def test_spoof_grid_energy(self):
        wins = sum(
            high_freq_energy(gen_appearance_patch(SampleSpec("spoof", "spoof", s), DOMAIN))
            > 2 * high_freq_energy(gen_appearance_patch(SampleSpec("bonafide", "spoof", s), DOMAIN))
            for s in range(100)
        )
        assert wins >= 95

    def test_forgery_seam(self):
        wins = sum(
            half_mean_gap(gen_appearance_patch(SampleSpec("forgery", "forgery", s), DOMAIN))
            > 3 * half_mean_gap(gen_appearance_patch(SampleSpec("bonafide", "forgery", s), DOMAIN))
            for s in range(100)
        )
        assert wins >= 95


SMALL = BenchmarkSpec(seed=5, samples_per_class=8, K=3, T=96, frames_min=90, frames_max=100)


class TestDataset:
    def test_default_layout(self):
        bench = BenchmarkSpec()
        assert bench.samples_per_class == 200
        for task in ("spoof", "forgery"):
            assert len(bench.domains[task]["intra"]) == 2 and len(bench.domains[task]["cross"]) == 2

    def test_row_counts(self, small_bench):
        total = sum(len(h) for h in small_bench.values())
        assert total == 2 * 4 * 2 * 8
        assert len(small_bench["test_cross"]) == 64
        assert len(small_bench["train"]) == len(small_bench["test_intra"]) == 32

    def test_regeneration_is_byte_identical(self, small_bench_dir, tmp_path):
        gen_dataset(SMALL, tmp_path)
        names = sorted(p.relative_to(small_bench_dir) for p in small_bench_dir.rglob("*") if p.is_file())
        assert names == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
        match, mismatch, errors = filecmp.cmpfiles(small_bench_dir, tmp_path, [str(n) for n in names], shallow=False)
        assert not mismatch and not errors

    def test_single_sample_regeneration(self, small_bench_dir, small_bench):
        rec = small_bench["test_cross"].samples[5]
        domain = next(d for d in SMALL.domains[rec.task]["cross"] if d.name == rec.domain)
        arrays = make_sample(SMALL, domain, rec.task, rec.label, rec.id)
        for arr, rel in zip(arrays, (rec.mst_path, rec.wav_path, rec.app_path)):
            np.testing.assert_array_equal(read_map(small_bench_dir / rel), arr.astype(np.float32))

    def test_round_trip_fields(self, small_bench):
        for h in small_bench.values():
            for s in h.samples:
                assert s.id.startswith(s.domain) and s.task in s.domain and s.label in s.id

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            gen_dataset(SMALL, blocker / "sub")


class TestLoadDataset:
    def copy_manifest(self, src_dir, dst_dir, edit=lambda lines: lines):
        lines = (src_dir / "train.tsv").read_text().splitlines()
        (dst_dir / "maps").symlink_to(src_dir / "maps")
        (dst_dir / "train.tsv").write_text("\n".join(edit(lines)) + "\n")
        return dst_dir / "train.tsv"

    def test_malformed_line(self, small_bench_dir, tmp_path):
        path = self.copy_manifest(small_bench_dir, tmp_path, lambda ls: ls[:3] + ["broken\tline"] + ls[3:])
        with pytest.raises(ManifestError, match=r"train.tsv:4"):
            load_dataset(path)

    def test_unknown_label(self, small_bench_dir, tmp_path):
        def relabel(lines):
            cols = lines[1].split("\t")
            cols[2] = "real"
            return [lines[0], "\t".join(cols)]

        path = self.copy_manifest(small_bench_dir, tmp_path, relabel)
        with pytest.raises(ManifestError, match="train.tsv:2: unknown label"):
            load_dataset(path)

    def test_missing_file(self, small_bench_dir, tmp_path):
        path = self.copy_manifest(small_bench_dir, tmp_path, lambda ls: [ls[0], ls[1].replace(".app.pfm", ".nope.pfm")])
        with pytest.raises(ManifestError, match="nope.pfm"):
            load_dataset(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="missing.tsv"):
            load_dataset(tmp_path / "missing.tsv")

    def test_truncated_map(self, small_bench_dir, tmp_path):
        (tmp_path / "maps").mkdir()
        rec_line = (small_bench_dir / "train.tsv").read_text().splitlines()[1]
        for rel in rec_line.split("\t")[4:]:
            blob = (small_bench_dir / rel).read_bytes()
            (tmp_path / rel).write_bytes(blob[: len(blob) // 2])
        (tmp_path / "train.tsv").write_text(rec_line + "\n")
        handle = load_dataset(tmp_path / "train.tsv")
        with pytest.raises(FormatError, match="maps/"):
            load_inputs(handle, {"app": (8, 8)})
