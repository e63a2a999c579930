"""Smoke test for the `rst` extension module.

Build and run from the repository root:

    cargo build --release -p rst-py --features extension-module
    cp target/release/librst_py.so python/rst.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import rst  # noqa: E402


def check(name, cond, detail=""):
    print(f"{'ok  ' if cond else 'FAIL'} {name} {detail}".rstrip())
    if not cond:
        check.failed += 1


check.failed = 0


def main():
    rng = random.Random(0)

    a = rst.Tensor([1, 2, 3, 4, 5, 6], [2, 3])
    b = rst.Tensor([1, 0, 0, 1, 1, 1], [3, 2])
    check("matmul", rst.matmul(a, b).tolist() == [4.0, 5.0, 10.0, 11.0])

    x = rst.Tensor([rng.uniform(-1, 1) for _ in range(2 * 5 * 5)], [2, 5, 5])
    k = rst.Tensor([rng.uniform(-1, 1) for _ in range(3 * 2 * 3 * 3)], [3, 2, 3, 3])
    y = rst.conv2d(x, k, stride=1, pad=1)
    check("conv2d shape", y.shape == [3, 5, 5])

    p = rst.softmax(rst.Tensor([rng.uniform(-5, 5) for _ in range(12)], [3, 4]), 1)
    rows = [sum(p.tolist()[i * 4:(i + 1) * 4]) for i in range(3)]
    check("softmax rows", all(abs(r - 1) < 1e-6 for r in rows))

    masks = rst.sector_masks(9, 11, 4)
    check("sector masks partition", all(sum(col) == 1 for col in zip(*masks)))
    windows = rst.strip_windows(8, 8, 4, 3)
    check("strip windows cover", sorted(i for w in windows for i in w) == list(range(64)))

    cfg = rst.tiny_config()
    model = rst.Model(cfg, seed=0)
    total = sum(len(model.get(n)) for n in model.names())
    check("param count", total == model.param_count, f"({model.param_count})")

    table = rst.flops(16, 16, cfg)
    check("flops total", table["total"] == sum(v for m, v in table.items() if m != "total"))

    img = rst.Tensor([rng.random() for _ in range(3 * 12 * 20)], [3, 12, 20])
    model.set("head.weight", rst.Tensor.zeros(model.get("head.weight").shape))
    check("zero head identity", model.forward(img).max_abs_diff(img) == 0.0)

    model = rst.Model(cfg, seed=1)
    target = rst.Tensor([rng.random() for _ in range(3 * 16 * 16)], [3, 16, 16])
    source = rst.Tensor([rng.random() for _ in range(3 * 16 * 16)], [3, 16, 16])
    loss, grads = model.loss_and_grad(source, target, 0.1)
    check("loss and grad", math.isfinite(loss) and set(grads) == set(model.names()))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.rstw")
        model.save(path)
        again = rst.Model.load(path, cfg)
        check("weights round trip", again.forward(source).max_abs_diff(model.forward(source)) == 0.0)
        with open(path, "r+b") as f:
            f.seek(64)
            byte = f.read(1)
            f.seek(64)
            f.write(bytes([byte[0] ^ 1]))
        try:
            rst.Model.load(path, cfg)
            check("crc detects corruption", False)
        except OSError as e:
            check("crc detects corruption", "CRC32" in str(e))

        image_path = os.path.join(d, "img.ppm")
        rst.save_image(image_path, img)
        back = rst.load_image(image_path)
        check("image round trip", back.max_abs_diff(img) <= 0.5 / 255 + 1e-6)

    reports = rst.audit("ffn", seed=0, instances=3)
    check("audit ffn", len(reports) > 0 and all(r["pass"] for r in reports), f"({len(reports)} reports)")

    trained, losses = rst.train_demo(steps=20, seed=0, config=cfg)
    first = sum(losses[:5]) / 5
    last = sum(losses[-5:]) / 5
    check("train demo", len(losses) == 20 and last < first, f"({first:.4f} -> {last:.4f})")

    if check.failed:
        print(f"{check.failed} check(s) failed")
        sys.exit(1)
    print("all checks passed")


if __name__ == "__main__":
    main()
