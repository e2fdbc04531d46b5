from hypothesis import given
from hypothesis import strategies as st

from builders import make_obs
from config_types import AreaPolicy, AreaStage, ClassPolicy, Polygon2D
from filters import apply_area_policy, confidence_gate
from property.settings import STANDARD_SETTINGS

LABELS = ("car", "pedestrian", "truck")
coords = st.floats(min_value=-40.0, max_value=40.0, allow_nan=False)


@st.composite
def rectangles(draw) -> Polygon2D:
    x0, y0 = draw(coords), draw(coords)
    w = draw(st.floats(min_value=1.0, max_value=30.0))
    h = draw(st.floats(min_value=1.0, max_value=30.0))
    return Polygon2D(vertices=((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)))


@st.composite
def frame_observations(draw, prefix: str):
    n = draw(st.integers(0, 8))
    return [
        make_obs(track_id=f"{prefix}{k}", x=draw(coords), y=draw(coords), cls=draw(st.sampled_from(LABELS)),
                 existence_conf=draw(st.one_of(st.none(), st.floats(0.0, 1.0))),
                 class_confs=draw(st.one_of(st.none(), st.dictionaries(st.sampled_from(LABELS),
                                                                       st.floats(0.0, 1.0), min_size=1))))
        for k in range(n)
    ]


@st.composite
def area_policies(draw) -> AreaPolicy:
    return AreaPolicy(
        include=tuple(draw(st.lists(rectangles(), max_size=2))),
        exclude=tuple(draw(st.lists(rectangles(), max_size=2))),
        class_allow=draw(st.one_of(st.none(), st.sets(st.sampled_from(LABELS)).map(lambda s: tuple(sorted(s))))),
        max_range_by_class=draw(st.dictionaries(st.sampled_from(LABELS), st.floats(5.0, 60.0), max_size=2)),
        stage=draw(st.sampled_from([AreaStage.PRE_REFERENCE, AreaStage.PRE_MATCHING])),
    )


# ---------------------------------------------------------------------------
# Idempotence
# ---------------------------------------------------------------------------

class TestFilterIdempotence:
    @given(res=frame_observations("r"), sut=frame_observations("s"), policy=area_policies())
    @STANDARD_SETTINGS
    def test_area_policy(self, res, sut, policy):
        kept_res, kept_sut, tags = apply_area_policy(res, sut, policy)
        again_res, again_sut, again_tags = apply_area_policy(kept_res, kept_sut, policy)
        assert (again_res, again_sut, again_tags) == (kept_res, kept_sut, [])
        assert len(kept_res) + len(kept_sut) + len(tags) == len(res) + len(sut)

    @given(sut=frame_observations("s"), tau=st.floats(0.0, 1.0),
           class_policy=st.sampled_from(list(ClassPolicy)))
    @STANDARD_SETTINGS
    def test_confidence_gate(self, sut, tau, class_policy):
        kept, tags = confidence_gate(sut, tau, class_policy)
        again, again_tags = confidence_gate(kept, tau, class_policy)
        assert (again, again_tags) == (kept, [])
        assert len(kept) + len(tags) == len(sut)

    @given(res=frame_observations("r"), sut=frame_observations("s"), policy=area_policies())
    @STANDARD_SETTINGS
    def test_post_matching_keeps_everything(self, res, sut, policy):
        post = AreaPolicy(include=policy.include, exclude=policy.exclude, class_allow=policy.class_allow,
                          max_range_by_class=policy.max_range_by_class, stage=AreaStage.POST_MATCHING)
        kept_res, kept_sut, tags = apply_area_policy(res, sut, post)
        assert (kept_res, kept_sut) == (res, sut)
        assert all(t.tag_only for t in tags)
