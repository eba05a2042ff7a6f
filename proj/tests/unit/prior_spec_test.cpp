#include <gtest/gtest.h>

#include "phead/error.hpp"
#include "phead/prior_spec.hpp"
#include "phead/priors.hpp"

namespace phead {
namespace {

TEST(PriorSpec, KindNamesRoundTrip) {
  for (auto k : {PriorKind::item, PriorKind::temporal, PriorKind::event, PriorKind::graph,
                 PriorKind::user, PriorKind::random, PriorKind::all})
    EXPECT_EQ(parse_prior_kind(to_string(k)), k);
  for (auto c : {Composition::hierarchical, Composition::multiplicative, Composition::additive})
    EXPECT_EQ(parse_composition(to_string(c)), c);
  for (auto g : {GroupEmbeddingIndex::parent, GroupEmbeddingIndex::current})
    EXPECT_EQ(parse_group_embedding_index(to_string(g)), g);
  EXPECT_THROW(parse_prior_kind("genre"), ConfigError);
  EXPECT_THROW(parse_composition("stacked"), ConfigError);
}

TEST(PriorSpec, GroupNames) {
  EXPECT_EQ(temporal_axis(8, 2).group_name(0), "ST");
  EXPECT_EQ(temporal_axis(8, 2).group_name(1), "LT");
  EXPECT_EQ(temporal_axis(8, 3).group_name(2), "seg3");
  PriorAxis item{PriorKind::item, 3};
  EXPECT_EQ(item.group_name(2), "cat2");
  item.names = {"shoes", "books", "music"};
  EXPECT_EQ(item.group_name(1), "books");
  EXPECT_EQ(to_string(HeadPath{{1, HeadPath::kAnyGroup, 0}}), "(1,*,0)");
}

TEST(PriorSpec, ValidateTemporalSegments) {
  PriorSpec spec{{temporal_axis(6, 2)}};
  EXPECT_NO_THROW(spec.validate(6));
  EXPECT_THROW(spec.validate(7), ConfigError);
  spec.axes[0].segments[1].first = 5;
  EXPECT_THROW(spec.validate(6), ConfigError);
  EXPECT_THROW(PriorSpec{}.validate(6), ConfigError);
  PriorAxis user{PriorKind::user, 2};
  EXPECT_THROW(PriorSpec{{user}}.validate(6), ConfigError);
  user.user_groups = {0, 1, 2};
  EXPECT_THROW(PriorSpec{{user}}.validate(6), ConfigError);
  user.user_groups = {0, 1, 1};
  EXPECT_NO_THROW(PriorSpec{{user}}.validate(6));
}

TEST(PriorSpec, JsonRoundTrip) {
  PriorAxis random{PriorKind::random, 4};
  random.seed = 99;
  PriorAxis user{PriorKind::user, 2};
  user.user_groups = {1, 0, 1};
  PriorAxis item{PriorKind::item, 2};
  item.names = {"a", "b"};
  const PriorSpec spec{{temporal_axis(8, 3), random, user, item}};
  EXPECT_EQ(prior_spec_from_json(prior_spec_to_json(spec)), spec);
  EXPECT_THROW(prior_spec_from_json("{\"axes\":[{\"kind\":\"item\",\"colour\":1}]}"), ConfigError);
  EXPECT_THROW(prior_spec_from_json("not json"), ConfigError);
}

}  // namespace
}  // namespace phead
