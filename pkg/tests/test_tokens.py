import numpy as np
import pytest

from scenelang import errors, lang, tokens

from helpers import random_program

WALL_PROGRAM = lang.SceneProgram(
    (lang.WallCmd(0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.5),)
)
WALL_SEQ = [1, 3, 4, 16, 16, 16, 16, 36, 16, 16, 66, 2]


def test_vocabulary_layout():
    assert (tokens.PAD, tokens.START, tokens.STOP, tokens.PART) == (0, 1, 2, 3)
    assert tokens.COMMAND_TOKENS == {
        "wall": 4, "door": 5, "window": 6, "bbox": 7,
        "prim": 8, "curved_wall": 9, "wall_prim": 10,
    }
    assert tokens.VALUE_BASE == 16
    assert tokens.VALUE_MAX == 2031
    assert tokens.VOCAB_SIZE == 2048


def test_tokenize_empty_program():
    assert tokens.tokenize(lang.SceneProgram()) == [tokens.START, tokens.STOP]


def test_tokenize_wall_example():
    assert tokens.tokenize(WALL_PROGRAM) == WALL_SEQ


def test_detokenize_examples():
    assert tokens.detokenize([1, 2]) == lang.SceneProgram()
    program = tokens.detokenize(WALL_SEQ)
    assert program == lang.quantize_scene(lang.normalize_origin(WALL_PROGRAM))


def test_bijection_random_programs():
    rng = np.random.default_rng(0)
    for _ in range(500):
        program = lang.canonicalize(random_program(rng))
        seq = tokens.tokenize(program)
        assert tokens.detokenize(seq) == lang.quantize_scene(
            lang.normalize_origin(program)
        )


def test_tokenize_value_out_of_range():
    big = lang.SceneProgram(
        (lang.WallCmd(0, 0.0, 0.0, 0.0, 150.0, 0.0, 0.0, 2.5),)
    )
    with pytest.raises(errors.ValueOutOfRange):
        tokens.tokenize(big)


def test_tokenize_origin_override():
    seq = tokens.tokenize(WALL_PROGRAM, origin=(-1.0, 0.0, 0.0))
    # the wall shifts +1m along x: a_x -> 20 units, b_x -> 40 units
    assert seq[3 + 1] == 16 + 20 and seq[3 + 4] == 16 + 40


def test_sequence_length_formula():
    rng = np.random.default_rng(1)
    for _ in range(100):
        program = random_program(rng)
        expected = 2 + sum(
            2 + tokens.arity(lang.kind_of(c)) for c in program.commands
        )
        assert tokens.sequence_length(program) == expected
        assert len(tokens.tokenize(lang.canonicalize(program))) == expected


def test_detokenize_strict_errors():
    with pytest.raises(errors.MalformedSequence):
        tokens.detokenize([])
    with pytest.raises(errors.MalformedSequence):
        tokens.detokenize([1, 3, 4, 16, 2])  # truncated wall body
    with pytest.raises(errors.MalformedSequence):
        tokens.detokenize([1, 3, 99] + [16] * 8 + [2])  # bad command token
    with pytest.raises(errors.MalformedSequence):
        tokens.detokenize([1, 2, 2])  # trailing token after STOP


def test_detokenize_lenient_truncation():
    seq = tokens.tokenize(WALL_PROGRAM)
    program, skipped = tokens.detokenize_lenient(seq[:-4])
    assert len(program.commands) == 0 and skipped == 1

    two = lang.SceneProgram(
        (
            lang.WallCmd(0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.5),
            lang.WallCmd(1, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 2.5),
        )
    )
    seq = tokens.tokenize(two)
    program, skipped = tokens.detokenize_lenient(seq[:-4])
    assert len(program.commands) == 1 and skipped == 1


def test_detokenize_lenient_fuzz_truncations():
    rng = np.random.default_rng(2)
    for _ in range(100):
        program = lang.canonicalize(random_program(rng))
        seq = tokens.tokenize(program)
        cut = int(rng.integers(0, len(seq)))
        recovered, skipped = tokens.detokenize_lenient(seq[:cut])
        assert len(recovered.commands) + skipped <= len(program.commands) + 1
        assert recovered.commands == program.commands[: len(recovered.commands)] or (
            lang.quantize_scene(lang.normalize_origin(program)).commands[
                : len(recovered.commands)
            ]
            == recovered.commands
        )


def test_detokenize_lenient_garbage_resync():
    seq = [1, 3, 4] + [16] * 8 + [3, 99, 3, 4] + [16] * 8 + [2]
    program, skipped = tokens.detokenize_lenient(seq)
    assert len(program.commands) == 2
    assert skipped == 1


def test_valid_next_tokens_examples():
    mask = tokens.valid_next_tokens([tokens.START])
    assert set(np.nonzero(mask)[0]) == {tokens.PART, tokens.STOP}
    mask = tokens.valid_next_tokens([tokens.START, tokens.PART])
    assert set(np.nonzero(mask)[0]) == set(range(4, 11))
    mask = tokens.valid_next_tokens([])
    assert set(np.nonzero(mask)[0]) == {tokens.START}
    mask = tokens.valid_next_tokens([tokens.START, tokens.PART, 4])
    assert mask[tokens.VALUE_BASE:].all() and not mask[: tokens.VALUE_BASE].any()


def test_valid_next_tokens_budget():
    # at the boundary with only 1 slot left, only STOP fits
    prefix = [tokens.START]
    mask = tokens.valid_next_tokens(prefix, max_len=2)
    assert set(np.nonzero(mask)[0]) == {tokens.STOP}
    # a command that cannot finish within budget is excluded
    prefix = [tokens.START, tokens.PART]
    mask = tokens.valid_next_tokens(prefix, max_len=12)
    allowed = set(np.nonzero(mask)[0])
    assert tokens.COMMAND_TOKENS["wall_prim"] in allowed  # arity 7 fits
    assert tokens.COMMAND_TOKENS["prim"] not in allowed   # arity 12 does not


def test_valid_next_tokens_unreachable():
    with pytest.raises(errors.UnreachablePrefix):
        tokens.valid_next_tokens([tokens.PART])
    with pytest.raises(errors.UnreachablePrefix):
        tokens.valid_next_tokens([tokens.START, 4])


def test_every_tokenized_sequence_is_self_consistent():
    rng = np.random.default_rng(3)
    for _ in range(100):
        seq = tokens.tokenize(lang.canonicalize(random_program(rng)))
        for i in range(len(seq)):
            mask = tokens.valid_next_tokens(seq[:i])
            assert mask[seq[i]], f"token {seq[i]} rejected at position {i}"


def test_masked_random_rollouts_detokenize():
    rng = np.random.default_rng(4)
    for _ in range(200):
        seq = []
        cursor = tokens.GrammarCursor()
        while True:
            mask = cursor.mask(max_len=64)
            options = np.nonzero(mask)[0]
            if len(options) == 0:
                break
            tok = int(rng.choice(options))
            seq.append(tok)
            cursor.advance(tok)
            if tok == tokens.STOP:
                break
        assert seq[-1] == tokens.STOP and len(seq) <= 64
        tokens.detokenize(seq)  # must not raise


def test_token_accuracy_identity_and_monotonicity():
    rng = np.random.default_rng(5)
    seq = tokens.tokenize(lang.canonicalize(random_program(rng)))
    assert tokens.token_accuracy_slack(seq, seq, 0) == 1.0
    perturbed = [t + 1 if t >= tokens.VALUE_BASE else t for t in seq]
    assert tokens.token_accuracy_slack(perturbed, seq, 1) == 1.0
    non_value = sum(1 for t in seq if t < tokens.VALUE_BASE)
    assert tokens.token_accuracy_slack(perturbed, seq, 0) == pytest.approx(
        non_value / len(seq)
    )
    last = 0.0
    for slack in range(4):
        acc = tokens.token_accuracy_slack(perturbed, seq, slack)
        assert acc >= last
        last = acc


def test_token_accuracy_length_mismatch():
    assert tokens.token_accuracy_slack([1, 2], [1, 3, 4, 2], 0) == 0.25
    assert tokens.token_accuracy_slack([], [], 0) == 1.0


def test_token_accuracy_partitions_do_not_mix():
    # a command token close to a special token never counts as correct
    assert tokens.token_accuracy_slack([4], [3], 5) == 0.0
    # value token vs command token with huge slack still wrong
    assert tokens.token_accuracy_slack([16], [4], 100) == 0.0


def test_token_file_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    seqs = [tokens.tokenize(lang.canonicalize(random_program(rng))) for _ in range(5)]
    path = tmp_path / "seqs.tok"
    tokens.write_token_file(path, seqs)
    assert tokens.read_token_file(path) == seqs


def test_sequence_too_long():
    wall_prims = tuple(
        lang.WallPrimCmd(0, 0.5, 0.1, 0.5, 0.2, 0.2, 0.2) for _ in range(300)
    )
    program = lang.SceneProgram(
        (lang.WallCmd(0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 2.5),) + wall_prims
    )
    with pytest.raises(errors.SequenceTooLong):
        tokens.tokenize(program)
