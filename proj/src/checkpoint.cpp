#include "dcpl/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "binary_io.hpp"
#include "dcpl/errors.hpp"

namespace dcpl::nn {

void write_checkpoint(std::ostream& os, const ParamList& params) {
    os.write("DCPW", 4);
    io::put<std::uint32_t>(os, kCheckpointVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + name);
        io::put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (double v : t.data()) io::put<double>(os, v);
    }
}

ParamList read_checkpoint(std::istream& is) {
    io::expect_magic(is, "DCPW");
    const auto version = io::get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = io::get<std::uint32_t>(is, "count");
    ParamList out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = io::get<std::uint16_t>(is, "name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("truncated tensor name");
        const auto rank = io::get<std::uint8_t>(is, "rank");
        if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0");
        ad::Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) {
            const auto d = io::get<std::uint32_t>(is, "dims");
            if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
            shape.push_back(d);
        }
        std::vector<double> values(ad::numel(shape));
        for (auto& v : values) v = io::get<double>(is, "tensor data");
        out.push_back({name, ad::Tensor::from(shape, std::move(values))});
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_checkpoint(os, params);
    if (!os) throw DataError("write failed for " + path.string());
}

ParamList load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return read_checkpoint(is);
}

void assign(const ParamList& target, const ParamList& source) {
    std::map<std::string, const ad::Tensor*> by_name;
    for (const auto& s : source) by_name[s.name] = &s.tensor;
    for (const auto& t : target) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + t.name + "'");
        if (it->second->shape() != t.tensor.shape())
            throw FormatError("tensor '" + t.name + "' has shape " + ad::shape_str(it->second->shape()) + ", expected " +
                              ad::shape_str(t.tensor.shape()));
        ad::Tensor dst = t.tensor;
        auto d = dst.mutable_data();
        const auto s = it->second->data();
        std::copy(s.begin(), s.end(), d.begin());
    }
}

}  // namespace dcpl::nn
