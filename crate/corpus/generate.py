import numpy as np, os
from skimage import data, color, transform
out = "corpus"
def save(name, a):
    a = np.clip(np.round(a), 0, 255).astype(np.uint8)
    h, w = a.shape
    with open(os.path.join(out, name + ".pgm"), "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h)); f.write(a.tobytes())
def gray(img):
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3]) * 255.0
    elif img.dtype != np.uint8:
        img = img.astype(float) * (255.0 / img.max())
    return img.astype(float)
def crop(img, y, x, s=128, scale=1.0):
    g = gray(img)
    if scale != 1.0:
        g = transform.rescale(g, scale, anti_aliasing=True, preserve_range=True)
    y = min(y, g.shape[0] - s); x = min(x, g.shape[1] - s)
    return g[y:y+s, x:x+s]
nat = [("camera", data.camera(), 100, 180, 0.5), ("astronaut", data.astronaut(), 20, 60, 0.5),
       ("coffee", data.coffee(), 100, 200, 0.5), ("chelsea", data.chelsea(), 30, 60, 0.5),
       ("coins", data.coins(), 40, 60, 0.6), ("moon", data.moon(), 180, 180, 1.0),
       ("page", data.page(), 20, 100, 1.0), ("text", data.text(), 20, 60, 0.8),
       ("brick", data.brick(), 100, 100, 1.0), ("grass", data.grass(), 200, 200, 1.0),
       ("gravel", data.gravel(), 50, 50, 1.0), ("rocket", data.rocket(), 120, 120, 0.5),
       ("horse", data.horse(), 40, 90, 0.4), ("hubble", data.hubble_deep_field(), 150, 150, 0.5)]
for n, img, y, x, s in nat:
    c = crop(img, y, x, 128, s); assert c.shape == (128, 128), n
    save("nat_" + n, c)
rng = np.random.default_rng(7)
yy, xx = np.mgrid[0:128, 0:128].astype(float)
save("syn_ramp", (xx + yy) * 255.0 / 254.0)
save("syn_stripes", 128 + 100 * np.sign(np.sin(xx / 5.0)))
save("syn_rings", 128 + 110 * np.cos(np.hypot(xx - 64, yy - 64) / 4.0))
save("syn_blocks", ((xx // 24 + yy // 40) % 3) * 100 + 20)
save("syn_noise_smooth", 128 + 40 * np.sin(xx / 11.0) * np.cos(yy / 7.0) + rng.normal(0, 6, (128, 128)))
save("syn_checker", ((xx // 8 + yy // 8) % 2) * 200 + 30)
save("syn_disc", np.where(np.hypot(xx - 60, yy - 70) < 35, 210, 40) + 0.2 * yy)
save("syn_diag", np.where(xx > yy, 180, 60) + rng.normal(0, 3, (128, 128)))
