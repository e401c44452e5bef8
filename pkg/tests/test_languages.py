import numpy as np
import pytest

from gwm_pictures.errors import AlphabetError, InfeasibleRequestError, MalformedInputError
from gwm_pictures.languages import (
    all_pictures,
    bs_membership,
    bs_target,
    count_members,
    expected_positive_count,
    generate_dataset,
    get_language,
    parse_size,
    read_dataset,
    read_picture,
    sb_membership,
    sb_picture,
    write_dataset,
    write_picture,
)
from gwm_pictures.structs import Picture


def rows(*lines: str) -> Picture:
    return Picture.from_rows(lines)


class TestBarsAndStripes:
    @pytest.mark.parametrize(
        "picture, member",
        [
            (rows("aaa", "aaa", "aaa"), True),
            (rows("aa", "ab"), False),
            (rows("aba", "aba"), True),
            (rows("aaa", "bbb", "aaa"), True),
            (rows("ab", "ba"), False),
        ],
    )
    def test_membership(self, picture, member):
        assert bs_membership(picture) is member

    def test_4x4_has_30_members(self):
        assert count_members("bs", 4, 4) == 30

    def test_positive_count_formula(self):
        language = get_language("bs")
        for m in range(1, 5):
            for n in range(1, 5):
                assert len(language.positives(m, n)) == 2**m + 2**n - 2 == expected_positive_count("bs", m, n)

    @pytest.mark.parametrize(
        "picture, target",
        [
            (rows("aaaa", "aaaa", "aaaa", "aaaa"), 2.0),
            (rows("bbb", "aaa", "bbb"), 1.0),
            (rows("ab", "ab"), 1.0),
            (rows("ab", "bb"), 0.0),
        ],
    )
    def test_target(self, picture, target):
        assert bs_target(picture) == target

    def test_agrees_with_automaton(self, bs_bruteforce_values):
        positives: dict[tuple[int, int], int] = {}
        for picture, value in bs_bruteforce_values.items():
            assert bs_membership(picture) == (value > 0)
            positives[picture.shape] = positives.get(picture.shape, 0) + (value > 0)
        for (m, n), count in positives.items():
            assert count == 2**m + 2**n - 2

    def test_non_binary_alphabet(self):
        with pytest.raises(AlphabetError):
            bs_membership(Picture.from_rows(["ac"], alphabet=("a", "c")))


class TestShiftingBits:
    def test_constructed_picture_is_member(self):
        rng = np.random.default_rng(0)
        picture = sb_picture(rng.integers(2, size=9), 3, 3)
        assert picture.shape == (3, 9)
        assert sb_membership(picture)

    def test_shift_fills_with_black(self):
        assert sb_picture([0, 1, 0, 0], 1, 3) == rows("abaa", "baba", "bbab")

    def test_single_row_is_member(self):
        for picture in all_pictures(1, 4):
            assert sb_membership(picture)

    def test_white_rows_are_not_members(self):
        assert not sb_membership(rows("aaaa", "aaaa"))

    def test_full_shift_gives_black_rows(self):
        assert sb_membership(rows("abab", "bbbb", "bbbb"))

    def test_random_constructions(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            m, n = int(rng.integers(1, 5)), int(rng.integers(1, 12))
            shift = int(rng.integers(1, n + 1))
            assert sb_membership(sb_picture(rng.integers(2, size=n), shift, m))

    @pytest.mark.parametrize("m, n, count", [(2, 2, 6), (2, 3, 18)])
    def test_small_counts(self, m, n, count):
        assert count_members("sb", m, n) == count
        assert len(get_language("sb").positives(m, n)) == count
        # the closed form n 2^n - 1 overcounts pictures reachable by several shifts
        assert expected_positive_count("sb", m, n) > count

    def test_non_binary_alphabet(self):
        with pytest.raises(AlphabetError):
            sb_membership(Picture.from_rows(["ac"], alphabet=("a", "c")))


class TestGenerateDataset:
    @pytest.fixture(scope="class")
    def bs_train(self):
        return generate_dataset("bs", [(4, 4)], 10000, 0.5, seed=7)

    def test_bs_balance(self, bs_train):
        labels = bs_train.labels()
        assert len(bs_train) == 10000
        assert np.count_nonzero(labels > 0) == 5000
        assert bs_train.metadata.positive_fraction == 0.5
        assert set(labels.tolist()) == {0.0, 1.0, 2.0}

    def test_bs_negatives_are_distinct(self, bs_train):
        negatives = [example.picture for example in bs_train.examples if example.label == 0]
        assert len(set(negatives)) == 5000
        assert len({example.picture for example in bs_train.examples if example.label > 0}) <= 30

    def test_labels_are_targets(self, bs_train):
        for example in bs_train.examples[:200]:
            assert example.label == bs_target(example.picture)

    def test_same_seed_same_dataset(self):
        first = generate_dataset("sb", [(2, 6), (2, 7)], 50, 0.5, seed=3)
        assert generate_dataset("sb", [(2, 6), (2, 7)], 50, 0.5, seed=3) == first
        assert generate_dataset("sb", [(2, 6), (2, 7)], 50, 0.5, seed=4) != first

    def test_excluded_negatives_never_reappear(self, bs_train):
        test = generate_dataset("bs", [(4, 4)], 1000, 0.5, seed=8, exclude=bs_train, split="test")
        train_negatives = {example.picture for example in bs_train.examples if example.label == 0}
        test_negatives = {example.picture for example in test.examples if example.label == 0}
        assert not train_negatives & test_negatives
        assert test.metadata.split == "test"

    def test_sb_widths(self):
        sizes = [(2, width) for width in range(5, 16)]
        dataset = generate_dataset("sb", sizes, 500, 0.5, seed=1)
        shapes = {example.picture.shape for example in dataset.examples}
        assert shapes <= set(sizes)
        assert len(shapes) > 5
        assert set(dataset.labels().tolist()) == {0.0, 1.0}
        for example in dataset.examples[:100]:
            assert example.label == float(sb_membership(example.picture))

    def test_distinct_positives_avoid_exclusion(self):
        train = generate_dataset("sb", [(2, 10)], 200, 1.0, seed=2, distinct_positives=True)
        test = generate_dataset(
            "sb", [(2, 10)], 200, 1.0, seed=3, exclude=train, distinct_positives=True
        )
        assert len(set(test.pictures())) == 200
        assert not set(train.pictures()) & set(test.pictures())

    def test_too_many_distinct_positives(self):
        train = generate_dataset("bs", [(2, 2)], 4, 1.0, seed=0)
        with pytest.raises(InfeasibleRequestError, match="positives"):
            generate_dataset("bs", [(2, 2)], 7, 1.0, seed=1, exclude=train, distinct_positives=True)

    def test_positives_beyond_the_unexcluded_ones(self):
        # four draws leave between two and five of the six 2x2 positives unused
        train = generate_dataset("bs", [(2, 2)], 4, 1.0, seed=0)
        with pytest.raises(InfeasibleRequestError, match="outside the excluded set"):
            generate_dataset("bs", [(2, 2)], 7, 1.0, seed=1, exclude=train)

    def test_positives_avoid_exclusion_when_enough_remain(self):
        train = generate_dataset("bs", [(2, 2)], 4, 1.0, seed=0)
        test = generate_dataset("bs", [(2, 2)], 2, 1.0, seed=1, exclude=train)
        assert not set(train.pictures()) & set(test.pictures())

    def test_too_many_negatives(self):
        # 16 pictures, 6 of them in the language
        with pytest.raises(InfeasibleRequestError, match="negatives"):
            generate_dataset("bs", [(2, 2)], 11, 0.0, seed=0)

    def test_repeated_negatives(self):
        train = generate_dataset("bs", [(2, 2)], 3, 0.0, seed=0)
        dataset = generate_dataset("bs", [(2, 2)], 40, 0.0, seed=1, exclude=train, distinct_negatives=False)
        assert len(dataset) == 40
        assert len(set(dataset.pictures())) <= 7
        assert not set(dataset.pictures()) & set(train.pictures())
        assert not any(bs_membership(picture) for picture in dataset.pictures())

    def test_all_negatives_when_just_feasible(self):
        dataset = generate_dataset("bs", [(2, 2)], 10, 0.0, seed=0)
        assert len(set(dataset.pictures())) == 10
        assert not any(bs_membership(picture) for picture in dataset.pictures())

    def test_positives_overlap_when_all_excluded(self):
        train = generate_dataset("bs", [(1, 2)], 50, 1.0, seed=0)
        test = generate_dataset("bs", [(1, 2)], 5, 1.0, seed=1, exclude=train)
        assert all(bs_membership(picture) for picture in test.pictures())

    @pytest.mark.parametrize("fraction", [-0.1, 1.5])
    def test_fraction_range(self, fraction):
        with pytest.raises(ValueError):
            generate_dataset("bs", [(2, 2)], 4, fraction, seed=0)

    def test_fraction_by_keyword(self):
        dataset = generate_dataset("bs", [(2, 2)], 4, positive_fraction=0.25, seed=0)
        assert dataset.metadata.positive_fraction == 0.25

    def test_unknown_language(self):
        with pytest.raises(ValueError):
            generate_dataset("checkers", [(2, 2)], 4, 0.5, seed=0)


class TestFiles:
    def test_dataset_round_trip(self):
        dataset = generate_dataset("bs", [(2, 3), (3, 3)], 20, 0.5, seed=5)
        assert read_dataset(write_dataset(dataset)) == dataset

    def test_dataset_text_layout(self):
        dataset = generate_dataset("bs", [(2, 2)], 2, 0.5, seed=5)
        lines = write_dataset(dataset).splitlines()
        assert lines[0] == "# generator: bs"
        assert "# seed: 5" in lines
        header = next(line for line in lines if not line.startswith("#"))
        m, n, label = header.split()
        assert (m, n) == ("2", "2") and float(label) in (0.0, 1.0, 2.0)

    def test_short_example_is_reported(self):
        with pytest.raises(MalformedInputError, match="line"):
            read_dataset("# generator: bs\n2 2 1.0\naa\n")

    def test_bad_header(self):
        with pytest.raises(MalformedInputError, match="line 1"):
            read_dataset("2 two 1.0\naa\naa\n")

    def test_fraction_must_match_labels(self):
        with pytest.raises(MalformedInputError):
            read_dataset("# positive_fraction: 1.0\n1 2 0.0\nab\n")

    def test_picture_file(self, tmp_path):
        picture = rows("abb", "bab")
        write_picture(picture, tmp_path / "p.pic")
        assert read_picture(tmp_path / "p.pic") == picture

    @pytest.mark.parametrize("text", ["0x4", "4", "ax2", "-1x3"])
    def test_bad_size(self, text):
        with pytest.raises(ValueError):
            parse_size(text)
