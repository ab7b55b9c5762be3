#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "mclstm/checkpoint.hpp"

using namespace mclstm;
using namespace mclstm::cells;

TEST_CASE("checkpoints round-trip bit-exactly for every variant") {
  const auto dir = std::filesystem::temp_directory_path() / "mclstm-ckpt-test";
  std::filesystem::remove_all(dir);
  for (CellVariant v : kAllVariants) {
    CAPTURE(variant_name(v));
    InitOptions opt;
    opt.readout = ReadoutMode::Linear;
    opt.hypernet_hidden = {4, 3};
    CellParams p = init_params({4, 2, 3}, v, 17, opt);
    // Awkward doubles that need every digit.
    p.tensors.begin()->second[0] = 0.1 + 0.2;
    p.tensors.begin()->second[1] = 5e-324;
    const auto path = dir / (std::string(variant_name(v)) + ".json");
    save_checkpoint(path, p, {{"note", "x"}});
    const CellParams q = load_checkpoint(path);
    CHECK(q.variant == p.variant);
    CHECK(q.readout == p.readout);
    CHECK(q.dims.cells == 4);
    CHECK(q.dims.mass == 2);
    CHECK(q.dims.aux == 3);
    REQUIRE(q.tensors.size() == p.tensors.size());
    for (const auto& [name, t] : p.tensors) {
      const Tensor& u = q.get(name);
      REQUIRE(u.shape() == t.shape());
      CHECK(std::memcmp(u.data().data(), t.data().data(), t.size() * sizeof(double)) == 0);
    }
    CHECK(load_checkpoint_metadata(path)["note"] == "x");
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed checkpoints are rejected") {
  auto doc = checkpoint_to_json(init_params({2, 1, 1}, CellVariant::McLstmBasic, 1));
  auto bad = doc;
  bad["format"] = "other";
  CHECK_THROWS_AS(checkpoint_from_json(bad), ContractError);
  bad = doc;
  bad["version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_json(bad), ContractError);
  bad = doc;
  bad["variant"] = "gru";
  CHECK_THROWS_AS(checkpoint_from_json(bad), ContractError);
  CHECK_THROWS(load_checkpoint("/nonexistent/ckpt.json"));
}
