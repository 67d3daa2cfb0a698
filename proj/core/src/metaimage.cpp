#include "tkvseg/metaimage.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string_view>

namespace tkvseg {

namespace {

static_assert(std::endian::native == std::endian::little,
              "MetaImage bodies are written in host order; big-endian hosts need byte swapping");

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw IoError("cannot format number");
  return std::string(buf, end);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename V>
constexpr const char* element_type() {
  return std::is_same_v<V, float> ? "MET_FLOAT" : "MET_UCHAR";
}

template <typename V>
std::string make_header(const Volume<V>& v, const std::string& data_file) {
  std::ostringstream h;
  // MetaImage lists axes fastest-first: x, y, z.
  h << "ObjectType = Image\n"
    << "NDims = 3\n"
    << "BinaryData = True\n"
    << "BinaryDataByteOrderMSB = False\n"
    << "CompressedData = False\n"
    << "Offset = " << format_double(v.origin[2]) << ' ' << format_double(v.origin[1]) << ' '
    << format_double(v.origin[0]) << '\n'
    << "ElementSpacing = " << format_double(v.spacing[2]) << ' ' << format_double(v.spacing[1])
    << ' ' << format_double(v.spacing[0]) << '\n'
    << "DimSize = " << v.dims[2] << ' ' << v.dims[1] << ' ' << v.dims[0] << '\n'
    << "ElementType = " << element_type<V>() << '\n'
    << "ElementDataFile = " << data_file << '\n';
  return h.str();
}

template <typename V>
void write_impl(const Volume<V>& v, const std::filesystem::path& path) {
  v.validate();
  const bool local = path.extension() == ".mha";
  std::filesystem::path raw_path = path;
  raw_path.replace_extension(".raw");
  const std::string header = make_header(v, local ? "LOCAL" : raw_path.filename().string());
  const auto* body = reinterpret_cast<const char*>(v.data.data());
  const auto body_size = static_cast<std::streamsize>(v.data.size() * sizeof(V));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (local) {
    out.write(body, body_size);
  } else {
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw IoError("cannot open for writing: " + raw_path.string());
    raw.write(body, body_size);
    if (!raw) throw IoError("failed writing " + raw_path.string());
  }
  if (!out) throw IoError("failed writing " + path.string());
}

struct Header {
  Index3 dims{};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  bool is_float = true;
  std::string data_file;
  std::size_t body_offset = 0;  // for LOCAL
};

template <typename N>
std::vector<N> parse_numbers(std::string_view value, std::size_t count, std::size_t line,
                             std::string_view key) {
  std::vector<N> out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    while (pos < value.size() && (value[pos] == ' ' || value[pos] == '\t')) ++pos;
    if (pos >= value.size()) break;
    N v{};
    auto [end, ec] = std::from_chars(value.data() + pos, value.data() + value.size(), v);
    if (ec != std::errc{}) throw ParseError("invalid number in " + std::string(key), line);
    pos = static_cast<std::size_t>(end - value.data());
    if (pos < value.size() && value[pos] != ' ' && value[pos] != '\t') {
      throw ParseError("invalid number in " + std::string(key), line);
    }
    out.push_back(v);
  }
  if (out.size() != count) {
    throw ParseError(std::string(key) + " needs " + std::to_string(count) + " values", line);
  }
  return out;
}

bool parse_bool(std::string_view value, std::size_t line, std::string_view key) {
  if (value == "True" || value == "true" || value == "1") return true;
  if (value == "False" || value == "false" || value == "0") return false;
  throw ParseError("invalid boolean for " + std::string(key), line);
}

Header parse_header(const std::string& bytes) {
  Header h;
  bool have_ndims = false, have_dims = false, have_type = false, have_file = false;
  std::size_t pos = 0, line = 0;
  while (pos < bytes.size() && !have_file) {
    ++line;
    std::size_t eol = bytes.find('\n', pos);
    const bool last = eol == std::string::npos;
    if (last) eol = bytes.size();
    const std::string_view text = trim(std::string_view(bytes).substr(pos, eol - pos));
    pos = last ? bytes.size() : eol + 1;
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'Key = Value'", line);
    const std::string_view key = trim(text.substr(0, eq));
    const std::string_view value = trim(text.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line);

    if (key == "NDims") {
      if (parse_numbers<int>(value, 1, line, key)[0] != 3) {
        throw ParseError("only NDims = 3 is supported", line);
      }
      have_ndims = true;
    } else if (key == "DimSize") {
      const auto d = parse_numbers<std::size_t>(value, 3, line, key);
      if (d[0] == 0 || d[1] == 0 || d[2] == 0) throw ParseError("DimSize must be positive", line);
      h.dims = {d[2], d[1], d[0]};
      have_dims = true;
    } else if (key == "ElementSpacing" || key == "ElementSize") {
      const auto s = parse_numbers<double>(value, 3, line, key);
      if (!(s[0] > 0 && s[1] > 0 && s[2] > 0)) {
        throw ParseError(std::string(key) + " must be positive", line);
      }
      h.spacing = {s[2], s[1], s[0]};
    } else if (key == "Offset" || key == "Origin" || key == "Position") {
      const auto o = parse_numbers<double>(value, 3, line, key);
      h.origin = {o[2], o[1], o[0]};
    } else if (key == "ElementType") {
      if (value == "MET_FLOAT") {
        h.is_float = true;
      } else if (value == "MET_UCHAR") {
        h.is_float = false;
      } else {
        throw ParseError("unsupported ElementType " + std::string(value), line);
      }
      have_type = true;
    } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
      if (parse_bool(value, line, key)) throw ParseError("big-endian bodies are not supported", line);
    } else if (key == "CompressedData") {
      if (parse_bool(value, line, key)) throw ParseError("compressed bodies are not supported", line);
    } else if (key == "BinaryData") {
      if (!parse_bool(value, line, key)) throw ParseError("ASCII bodies are not supported", line);
    } else if (key == "ElementNumberOfChannels") {
      if (parse_numbers<int>(value, 1, line, key)[0] != 1) {
        throw ParseError("multi-channel images are not supported", line);
      }
    } else if (key == "ElementDataFile") {
      if (value.empty()) throw ParseError("empty ElementDataFile", line);
      h.data_file = std::string(value);
      h.body_offset = pos;
      have_file = true;
    }
    // Remaining keys (ObjectType, TransformMatrix, AnatomicalOrientation, ...) carry no
    // information this reader uses.
  }
  if (!have_ndims) throw ParseError("missing NDims", line);
  if (!have_dims) throw ParseError("missing DimSize", line);
  if (!have_type) throw ParseError("missing ElementType", line);
  if (!have_file) throw ParseError("missing ElementDataFile", line);
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <typename V>
Volume<V> fill_volume(const Header& h, std::string_view body, const std::filesystem::path& path) {
  Volume<V> v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.origin = h.origin;
  const std::size_t count = h.dims[0] * h.dims[1] * h.dims[2];
  if (body.size() != count * sizeof(V)) {
    throw IntegrityError(path.string() + ": DimSize " + to_string(h.dims) + " needs " +
                         std::to_string(count * sizeof(V)) + " body bytes, found " +
                         std::to_string(body.size()));
  }
  v.data.resize(count);
  std::memcpy(v.data.data(), body.data(), body.size());
  return v;
}

}  // namespace

void write_volume(const ImageVolume& volume, const std::filesystem::path& path) {
  write_impl(volume, path);
}

void write_volume(const LabelVolume& volume, const std::filesystem::path& path) {
  write_impl(volume, path);
}

AnyVolume read_volume(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const Header h = parse_header(bytes);
  std::string external;
  std::string_view body;
  if (h.data_file == "LOCAL") {
    body = std::string_view(bytes).substr(h.body_offset);
  } else {
    external = slurp(path.parent_path() / h.data_file);
    body = external;
  }
  if (h.is_float) return fill_volume<float>(h, body, path);
  return fill_volume<std::uint8_t>(h, body, path);
}

ImageVolume read_image(const std::filesystem::path& path) {
  AnyVolume any = read_volume(path);
  if (auto* img = std::get_if<ImageVolume>(&any)) return std::move(*img);
  const auto& lab = std::get<LabelVolume>(any);
  ImageVolume img;
  img.dims = lab.dims;
  img.spacing = lab.spacing;
  img.origin = lab.origin;
  img.data.assign(lab.data.begin(), lab.data.end());
  return img;
}

LabelVolume read_labels(const std::filesystem::path& path) {
  AnyVolume any = read_volume(path);
  if (auto* lab = std::get_if<LabelVolume>(&any)) return std::move(*lab);
  throw IntegrityError(path.string() + ": label volumes must be MET_UCHAR");
}

}  // namespace tkvseg
