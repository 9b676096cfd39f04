#include "sgen/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "sgen/error.hpp"

namespace sgen {

nlohmann::json params_to_json(const ParameterStore& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    arr.push_back({{"name", p.name},
                   {"rows", p.value.rows()},
                   {"cols", p.value.cols()},
                   {"data", p.value.data()}});
  }
  return {{"version", kCheckpointVersion}, {"format", "sgen-params"}, {"params", arr}};
}

namespace {

void check_header(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("params") || !j.contains("version")) {
    throw Error(ErrorKind::kMalformedFile, "checkpoint: missing version or params");
  }
  if (j.at("version") != kCheckpointVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                "checkpoint: unsupported version " + j.at("version").dump());
  }
}

Tensor2 tensor_from(const nlohmann::json& entry) {
  const auto rows = entry.at("rows").get<std::size_t>();
  const auto cols = entry.at("cols").get<std::size_t>();
  auto data = entry.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) {
    throw Error(ErrorKind::kMalformedFile, "checkpoint: bad data length for " +
                                               entry.at("name").get<std::string>());
  }
  return Tensor2(rows, cols, std::move(data));
}

}  // namespace

void params_from_json(const nlohmann::json& j, ParameterStore& params) {
  check_header(j);
  const auto& arr = j.at("params");
  if (arr.size() != params.size()) {
    throw Error(ErrorKind::kValidation, "checkpoint: parameter count mismatch");
  }
  try {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = arr[i];
      if (entry.at("name").get<std::string>() != params[i].name) {
        throw Error(ErrorKind::kValidation,
                    "checkpoint: expected parameter " + params[i].name);
      }
      Tensor2 t = tensor_from(entry);
      if (!t.same_shape(params[i].value)) {
        throw Error(ErrorKind::kValidation, "checkpoint: shape mismatch for " + params[i].name);
      }
      params[i].value = std::move(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("checkpoint: ") + e.what());
  }
}

ParameterStore params_from_json(const nlohmann::json& j) {
  check_header(j);
  ParameterStore store;
  try {
    for (const auto& entry : j.at("params")) {
      store.add(entry.at("name").get<std::string>(), tensor_from(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("checkpoint: ") + e.what());
  }
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const nlohmann::json& meta) {
  nlohmann::json j = params_to_json(params);
  j["meta"] = meta;
  write_text_file(path, j.dump());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kMalformedFile, path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kMissingArtifact, "cannot write " + path.string());
  out << text;
}

}  // namespace sgen
