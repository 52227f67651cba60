import csv

import numpy as np
import pytest

from braillespeech.braille_codec import BrailleCell, TextUnit, pinyin_to_cells, render_image
from braillespeech.braille_codec.tokenizer import Vocabulary, tokenize_batch
from braillespeech.contrastive_i2t import (
    DualEncoder,
    EncoderParams,
    I2TConfig,
    contrastive_loss,
    embed_images,
    fill_batches,
    hard_negative_order,
    i2t_step,
    image_to_array,
    similarity,
    train_i2t,
    unique_batches,
)
from braillespeech.errors import NonSquare, ShapeMismatch
from braillespeech.tensor_core import Tensor, grad_check

SMALL = EncoderParams(image_dim=16, image_heads=2, image_blocks=1, text_dim=16, text_heads=2, text_blocks=1, out_dim=16)


@pytest.fixture(scope="module")
def model():
    return DualEncoder(SMALL, seed=0)


def units_sample(table, n):
    return table.all_units()[:: max(1, len(table.all_units()) // n)][:n]


def arrays_for(units, params=SMALL):
    return np.stack([image_to_array(render_image(pinyin_to_cells(u)), params) for u in units])


def test_identical_images_identical_embeddings(model):
    a = arrays_for([TextUnit.spell("h", "ao", 3)] * 2)
    emb = model.encode_image(a).data
    assert np.array_equal(emb[0], emb[1])
    assert np.allclose(np.linalg.norm(emb, axis=1), 1, atol=1e-5)


def test_blank_and_full_cells_are_distinct_at_init(model):
    a = np.stack([image_to_array(render_image([BrailleCell(b)] * 3), SMALL) for b in (0, 63)])
    emb = model.encode_image(a).data
    assert float(emb[0] @ emb[1]) < 0.99


def test_text_embedding_ignores_padding(model, table):
    vocab = Vocabulary(table)
    tokens = tokenize_batch([TextUnit.spell("h", "ao", 3)], vocab, SMALL.context_length)
    emb = model.encode_text(tokens).data
    assert np.allclose(np.linalg.norm(emb), 1, atol=1e-5)
    assert np.array_equal(emb, model.encode_text(tokens.copy()).data)
    # pad positions are masked out of attention and pooling, so their content does not matter
    table_rows = model.store["i2t.text.token"].data
    saved = table_rows[vocab.pad_id].copy()
    table_rows[vocab.pad_id] += 5.0
    try:
        assert np.allclose(model.encode_text(tokens).data, emb, atol=1e-6)
    finally:
        table_rows[vocab.pad_id] = saved


def test_image_canvas_is_padded(model):
    img = render_image(pinyin_to_cells(TextUnit.number("1234")))
    arr = image_to_array(img, SMALL)
    assert arr.shape == (SMALL.image_height, SMALL.image_width)
    assert 0.0 <= arr.min() and arr.max() <= 1.0


def test_similarity_basics():
    eye = np.eye(3, dtype=np.float32)
    assert np.allclose(similarity(eye, eye, 0.5).data, 2 * eye)
    assert similarity(eye[:1], eye[:1]).shape == (1, 1)
    a, b = np.random.default_rng(0).normal(size=(2, 4, 3))
    assert np.allclose(similarity(a, b).data, similarity(b, a).data.T)
    with pytest.raises(ShapeMismatch):
        similarity(eye, eye[:2])


def test_loss_perfect_separation():
    loss = contrastive_loss(50.0 * np.eye(4))
    assert float(loss.loss_it.data) < 1e-6


def test_loss_uniform_is_log_b():
    loss = contrastive_loss(np.zeros((4, 4)))
    assert float(loss.loss_i.data) == pytest.approx(np.log(4), abs=1e-6)
    assert float(loss.loss_t.data) == pytest.approx(np.log(4), abs=1e-6)


def test_loss_matches_hand_cross_entropy():
    p = np.array([[0.3, -1.2, 0.5], [2.0, 0.1, -0.4], [0.0, 0.7, 1.1]])

    def ce(m):
        return np.mean([np.log(np.exp(m[i]).sum()) - m[i, i] for i in range(3)])

    loss = contrastive_loss(p)
    assert float(loss.loss_i.data) == pytest.approx(ce(p), abs=1e-6)
    assert float(loss.loss_t.data) == pytest.approx(ce(p.T), abs=1e-6)
    assert loss.loss_it.data == (loss.loss_i.data + loss.loss_t.data) * np.float32(0.5)
    with pytest.raises(NonSquare):
        contrastive_loss(np.zeros((2, 3)))


def test_composed_loss_gradcheck(model, table):
    units = units_sample(table, 4)
    arrays = arrays_for(units)
    tokens = tokenize_batch(units, Vocabulary(table), SMALL.context_length)
    params = model.parameters()
    res = grad_check(lambda: i2t_step(model, arrays, tokens)[1].loss_it, params, max_coords=80)
    assert res.max_relative_error < 1e-3


def test_unique_batches_have_distinct_texts():
    units = [TextUnit.number(str(i % 5)) for i in range(23)]
    batches = unique_batches(units, 4, np.random.default_rng(0))
    assert sorted(i for b in batches for i in b) == list(range(23))
    for b in batches:
        assert len({units[i] for i in b}) == len(b) <= 4


def test_hard_negative_order_is_a_permutation(rng):
    units = [TextUnit.number(str(i % 7)) for i in range(30)]
    emb = {u: v / np.linalg.norm(v) for u, v in zip(dict.fromkeys(units), rng.normal(size=(7, 4)))}
    order = hard_negative_order(units, emb, 3, rng)
    assert sorted(order) == list(range(30))
    assert all(len(set(units[i] for i in b)) == len(b) for b in fill_batches(order, units, 8))


def test_overfit_one_batch_and_curve(tmp_path, table):
    units = units_sample(table, 8)
    model = DualEncoder(SMALL, seed=1)
    curve = tmp_path / "i2t.csv"
    history = train_i2t(model, arrays_for(units), units, I2TConfig(epochs=100, batch_size=8, lr=5e-3, warmup_steps=0),
                        curve_path=curve)
    assert history[-1].acc == 1.0
    rows = list(csv.reader(open(curve)))
    assert rows[0] == ["epoch", "loss_i", "loss_t", "loss_it", "acc"]
    assert len(rows) == 101
    for h in history:
        assert h.loss_it == pytest.approx((h.loss_i + h.loss_t) / 2, rel=1e-6)


def test_training_is_deterministic(table):
    units = units_sample(table, 6)
    arrays = arrays_for(units)

    def run():
        m = DualEncoder(SMALL, seed=3)
        train_i2t(m, arrays, units, I2TConfig(epochs=2, batch_size=3))
        return embed_images(m, arrays).tobytes()

    assert run() == run()


def test_encoder_params_validation():
    with pytest.raises(ShapeMismatch):
        EncoderParams(image_dim=30, image_heads=4).validate()
    with pytest.raises(ShapeMismatch):
        EncoderParams(patch=7).validate()
    assert isinstance(DualEncoder(SMALL).log_scale, Tensor)
