"""Quick check of the bindings. Run after `pip install --no-build-isolation -e crates/py`."""
import math
import tempfile

import autalk


def main():
    names = autalk.catalogue()
    assert len(names) == autalk.NUM_AUS == 18
    assert names[:3] == ["AU1", "AU2", "AU4"], names[:3]
    assert autalk.emotion_aus("happy") == ["AU6", "AU12"]

    v = autalk.AuVector.from_emotion("happy", 3.0)
    assert v.get("AU12") == 3.0 and v.get("AU1") == 0.0
    try:
        autalk.AuVector([6.0] * 18)
    except autalk.AutalkError as e:
        assert str(e).startswith("invalid_input"), e
    else:
        raise AssertionError("out of range AU accepted")

    rig = autalk.Rig(audio_width=4, seed=1)
    neutral = rig.evaluate(autalk.AuVector())
    smile = rig.evaluate(v)
    assert len(neutral) == autalk.NUM_LANDMARKS
    assert neutral == rig.base_frame()
    assert autalk.lmd([smile], [smile]) == 0.0
    assert autalk.lmd([smile], [neutral]) > 0.0

    xf = autalk.SimilarityTransform(1.3, 0.4, [0.1, -0.2])
    moved = xf.apply(neutral)
    back = autalk.procrustes(moved, neutral)
    assert abs(back.scale - 1 / 1.3) < 1e-9

    img = [[(x + y) / 30 for x in range(16)] for y in range(16)]
    assert math.isinf(autalk.psnr(img, img))
    assert abs(autalk.ssim(img, img) - 1.0) < 1e-9
    raster = autalk.rasterize([[0.5, 0.5]], 65)
    assert raster[32][32] == max(max(r) for r in raster)

    with tempfile.TemporaryDirectory() as d:
        code = autalk.run_cli(["synth-data", "--out", d + "/toy", "--set", "rig.num_clips=2",
                               "--set", "rig.frames_per_clip=4", "--set", "rig.image_size=8"])
        assert code == 0, code
    print("smoke test ok")


if __name__ == "__main__":
    main()
