#include "ctc/tt_io.hpp"

#include <fstream>

#include <json.hpp>

#include "ctc/tensor_io.hpp"

namespace ctc {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void write_tt(const std::filesystem::path& stem, const TT& t) {
    {
        std::ofstream out(with_suffix(stem, ".dten"), std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + with_suffix(stem, ".dten").string() + " for writing");
        for (const auto& core : t.cores()) write_dten(out, core);
    }
    nlohmann::json meta;
    meta["dims"] = t.dims();
    meta["rank"] = t.ranks();
    meta["left_orthogonal"] = t.left_orthogonal();
    std::ofstream js(with_suffix(stem, ".json"), std::ios::trunc);
    if (!js) throw DataError("cannot open " + with_suffix(stem, ".json").string() + " for writing");
    js << meta.dump(2) << '\n';
}

TT read_tt(const std::filesystem::path& stem) {
    std::ifstream js(with_suffix(stem, ".json"));
    if (!js) throw DataError("cannot open " + with_suffix(stem, ".json").string());
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(with_suffix(stem, ".json").string() + ": " + e.what());
    }
    const auto dims = meta.at("dims").get<Dims>();
    const auto rank = meta.at("rank").get<std::vector<Index>>();
    const bool left_orth = meta.value("left_orthogonal", false);

    std::ifstream in(with_suffix(stem, ".dten"), std::ios::binary);
    if (!in) throw DataError("cannot open " + with_suffix(stem, ".dten").string());
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < dims.size(); ++k) cores.push_back(read_dten(in));
    TT t(std::move(cores), left_orth);
    if (t.dims() != dims || t.ranks() != rank)
        throw DataError(stem.string() + ": cores disagree with JSON sidecar");
    return t;
}

}  // namespace ctc
