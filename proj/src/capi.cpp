#include "ecs/ecs.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "ecs/analysis.hpp"
#include "ecs/checkpoint.hpp"
#include "ecs/config.hpp"
#include "ecs/pipeline.hpp"

struct ecs_config {
  ecs::ConfigEntries file;
  ecs::ConfigEntries overrides;
};
struct ecs_dataset {
  ecs::LabeledDataset data;
};
struct ecs_network {
  ecs::TrainedNetwork net;
};
struct ecs_individual {
  ecs::Individual ind;
};

namespace {

thread_local std::string last_error;

ecs_status to_status(ecs::ErrorCode code) {
  switch (code) {
    case ecs::ErrorCode::invalid_argument: return ECS_ERR_INVALID_ARGUMENT;
    case ecs::ErrorCode::io: return ECS_ERR_IO;
    case ecs::ErrorCode::format: return ECS_ERR_FORMAT;
    case ecs::ErrorCode::checksum: return ECS_ERR_CHECKSUM;
    case ecs::ErrorCode::version: return ECS_ERR_VERSION;
    case ecs::ErrorCode::shape: return ECS_ERR_SHAPE;
    case ecs::ErrorCode::numeric: return ECS_ERR_NUMERIC;
    case ecs::ErrorCode::layout: return ECS_ERR_LAYOUT;
    case ecs::ErrorCode::config: return ECS_ERR_CONFIG;
  }
  return ECS_ERR_INTERNAL;
}

template <class F>
ecs_status guard(F&& f) {
  try {
    last_error.clear();
    f();
    return ECS_OK;
  } catch (const ecs::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return ECS_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return ECS_ERR_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return ECS_ERR_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (!p) ecs::fail(ecs::ErrorCode::invalid_argument, std::string(name) + " is null");
}

ecs_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || cap < s.size() + 1) {
    last_error = "buffer needs " + std::to_string(s.size() + 1) + " bytes";
    return ECS_ERR_BUFFER_TOO_SMALL;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return ECS_OK;
}

template <class F>
ecs_status string_out(char* buf, size_t cap, size_t* needed, F&& make) {
  std::string s;
  const ecs_status st = guard([&] { s = make(); });
  if (st != ECS_OK) return st;
  return copy_out(s, buf, cap, needed);
}

ecs::RunConfig resolve(const ecs_config* cfg) {
  require(cfg, "config");
  return ecs::resolve_config(cfg->file, cfg->overrides);
}

ecs::LayoutPtr layout_of(const ecs_network* net) {
  return std::make_shared<const ecs::MaskLayout>(
      ecs::MaskLayout::from_spec(net->net.spec()));
}

}  // namespace

extern "C" {

const char* ecs_status_string(ecs_status status) {
  switch (status) {
    case ECS_OK: return "ok";
    case ECS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case ECS_ERR_IO: return "i/o error";
    case ECS_ERR_FORMAT: return "format error";
    case ECS_ERR_CHECKSUM: return "checksum mismatch";
    case ECS_ERR_VERSION: return "version mismatch";
    case ECS_ERR_SHAPE: return "shape mismatch";
    case ECS_ERR_NUMERIC: return "numeric failure";
    case ECS_ERR_LAYOUT: return "layout mismatch";
    case ECS_ERR_CONFIG: return "configuration error";
    case ECS_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case ECS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ecs_last_error(void) { return last_error.c_str(); }

const char* ecs_version(void) { return "1.0.0"; }

ecs_status ecs_config_create(ecs_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new ecs_config{};
  });
}

ecs_status ecs_config_load_file(ecs_config* cfg, const char* path) {
  return guard([&] {
    require(cfg, "config");
    require(path, "path");
    auto entries = ecs::parse_config_file(path);
    cfg->file.insert(cfg->file.end(), entries.begin(), entries.end());
  });
}

ecs_status ecs_config_parse_text(ecs_config* cfg, const char* text) {
  return guard([&] {
    require(cfg, "config");
    require(text, "text");
    auto entries = ecs::parse_config_text(text);
    cfg->file.insert(cfg->file.end(), entries.begin(), entries.end());
  });
}

ecs_status ecs_config_set(ecs_config* cfg, const char* key, const char* value) {
  return guard([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    // Reject bad keys and malformed values now rather than at resolve time.
    ecs::RunConfig probe;
    ecs::set_config_value(probe, key, value);
    cfg->overrides.emplace_back(key, value);
  });
}

ecs_status ecs_config_apply_preset(ecs_config* cfg, const char* name) {
  return ecs_config_set(cfg, "run.preset", name);
}

ecs_status ecs_config_validate(const ecs_config* cfg) {
  return guard([&] { resolve(cfg); });
}

ecs_status ecs_config_get(const ecs_config* cfg, const char* key, char* buf,
                          size_t cap, size_t* needed) {
  return string_out(buf, cap, needed, [&] {
    require(key, "key");
    return ecs::get_config_value(resolve(cfg), key);
  });
}

ecs_status ecs_config_serialize(const ecs_config* cfg, char* buf, size_t cap,
                                size_t* needed) {
  return string_out(buf, cap, needed,
                    [&] { return ecs::serialize_config(resolve(cfg)); });
}

void ecs_config_free(ecs_config* cfg) { delete cfg; }

ecs_status ecs_run(const ecs_config* cfg, const char* command, ecs_log_fn log,
                   void* user) {
  return guard([&] {
    require(command, "command");
    const ecs::RunConfig rc = resolve(cfg);
    ecs::run_command(command, rc, [&](const std::string& line) {
      if (log) log(line.c_str(), user);
    });
  });
}

ecs_status ecs_dataset_load_idx(const char* images_path, const char* labels_path,
                                ecs_dataset** out) {
  return guard([&] {
    require(images_path, "images_path");
    require(labels_path, "labels_path");
    require(out, "out");
    *out = new ecs_dataset{ecs::load_idx(images_path, labels_path)};
  });
}

ecs_status ecs_dataset_synthetic_blobs(int classes, int per_class, int height,
                                       int width, int channels, uint64_t seed,
                                       ecs_dataset** out) {
  return guard([&] {
    require(out, "out");
    *out = new ecs_dataset{ecs::synthetic_blobs(classes, per_class,
                                                {height, width, channels}, seed)};
  });
}

ecs_status ecs_dataset_info(const ecs_dataset* ds, size_t* count, int* height,
                            int* width, int* channels) {
  return guard([&] {
    require(ds, "dataset");
    const ecs::Dims3 d = ds->data.dims();
    if (count) *count = ds->data.size();
    if (height) *height = d.height;
    if (width) *width = d.width;
    if (channels) *channels = d.channels;
  });
}

void ecs_dataset_free(ecs_dataset* ds) { delete ds; }

ecs_status ecs_network_create_lenet(uint64_t seed, ecs_network** out) {
  return guard([&] {
    require(out, "out");
    *out = new ecs_network{ecs::TrainedNetwork::initialize(ecs::lenet_spec(), seed)};
  });
}

ecs_status ecs_network_load(const char* path, ecs_network** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ecs_network{ecs::load_network(path)};
  });
}

ecs_status ecs_network_save(const ecs_network* net, const char* path) {
  return guard([&] {
    require(net, "network");
    require(path, "path");
    ecs::save_checkpoint(net->net, path);
  });
}

ecs_status ecs_network_error(const ecs_network* net, const ecs_dataset* ds,
                             double* error) {
  return guard([&] {
    require(net, "network");
    require(ds, "dataset");
    require(error, "error");
    *error = ecs::evaluate_error(net->net, ds->data);
  });
}

ecs_status ecs_network_forward(const ecs_network* net, const float* batch,
                               size_t count, float* logits, size_t logits_cap) {
  if (net && logits_cap < count * size_t(net->net.spec().class_count)) {
    last_error = "logits needs " +
                 std::to_string(count * size_t(net->net.spec().class_count)) + " values";
    return ECS_ERR_BUFFER_TOO_SMALL;
  }
  return guard([&] {
    require(net, "network");
    require(batch, "batch");
    require(logits, "logits");
    const ecs::Dims3 in = net->net.spec().input;
    const std::size_t classes = std::size_t(net->net.spec().class_count);
    if (count == 0) ecs::fail(ecs::ErrorCode::invalid_argument, "empty batch");
    const ecs::Shape shape{count, std::size_t(in.height), std::size_t(in.width),
                           std::size_t(in.channels)};
    ecs::Tensor x(shape, std::vector<float>(batch, batch + ecs::shape_size(shape)));
    const ecs::Tensor y = ecs::forward(net->net, x);
    std::memcpy(logits, y.data(), y.size() * sizeof(float));
  });
}

ecs_status ecs_network_train(ecs_network* net, const ecs_dataset* ds, int epochs,
                             int batch_size, double learning_rate, uint64_t seed) {
  return guard([&] {
    require(net, "network");
    require(ds, "dataset");
    ecs::TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.learning_rate = learning_rate;
    tc.seed = seed;
    net->net = ecs::train(net->net, ds->data, tc);
  });
}

ecs_status ecs_network_parameter_count(const ecs_network* net, size_t* count) {
  return guard([&] {
    require(net, "network");
    require(count, "count");
    *count = net->net.parameter_count();
  });
}

ecs_status ecs_network_describe(const ecs_network* net, char* buf, size_t cap,
                                size_t* needed) {
  return string_out(buf, cap, needed, [&] {
    require(net, "network");
    return net->net.spec().describe();
  });
}

void ecs_network_free(ecs_network* net) { delete net; }

ecs_status ecs_individual_parse(const ecs_network* net, const char* text,
                                ecs_individual** out) {
  return guard([&] {
    require(net, "network");
    require(text, "text");
    require(out, "out");
    *out = new ecs_individual{ecs::Individual::parse(layout_of(net), text)};
  });
}

ecs_status ecs_individual_keep_first(const ecs_network* net, const int* counts,
                                     size_t n, ecs_individual** out) {
  return guard([&] {
    require(net, "network");
    require(counts, "counts");
    require(out, "out");
    *out = new ecs_individual{ecs::Individual::keep_first(
        layout_of(net), std::span<const int>(counts, n))};
  });
}

ecs_status ecs_individual_load(const char* path, ecs_individual** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ecs_individual{ecs::load_individual(path)};
  });
}

ecs_status ecs_individual_save(const ecs_individual* ind, const char* path) {
  return guard([&] {
    require(ind, "individual");
    require(path, "path");
    ecs::save_checkpoint(ind->ind, path);
  });
}

ecs_status ecs_individual_to_string(const ecs_individual* ind, char* buf,
                                    size_t cap, size_t* needed) {
  return string_out(buf, cap, needed, [&] {
    require(ind, "individual");
    return ind->ind.to_string();
  });
}

ecs_status ecs_individual_compact(const ecs_network* net,
                                  const ecs_individual* ind, ecs_network** out) {
  return guard([&] {
    require(net, "network");
    require(ind, "individual");
    require(out, "out");
    *out = new ecs_network{ecs::compact_network(net->net, ind->ind)};
  });
}

void ecs_individual_free(ecs_individual* ind) { delete ind; }

ecs_status ecs_ratios(const ecs_network* net, const ecs_individual* ind,
                      double* r_c, double* r_s, double* r_f) {
  return guard([&] {
    require(net, "network");
    require(ind, "individual");
    const ecs::CompressionReport r = ecs::overall_report(net->net, ind->ind);
    if (r_c) *r_c = r.r_c;
    if (r_s) *r_s = r.r_s;
    if (r_f) *r_f = r.r_f;
  });
}

ecs_status ecs_report_text(const ecs_network* net, const ecs_individual* ind,
                           char* buf, size_t cap, size_t* needed) {
  return string_out(buf, cap, needed, [&] {
    require(net, "network");
    require(ind, "individual");
    return ecs::emit_table(ecs::overall_report(net->net, ind->ind));
  });
}

ecs_status ecs_export_filters(const ecs_network* net, size_t layer,
                              const char* dir, size_t* written) {
  return guard([&] {
    require(net, "network");
    require(dir, "dir");
    const auto files = ecs::export_filters(net->net, layer, dir);
    if (written) *written = files.size();
  });
}

}  // extern "C"
