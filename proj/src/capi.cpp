#include "prunekit.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>

#include "json.hpp"

#include "prunekit/errors.hpp"
#include "prunekit/experiment.hpp"
#include "prunekit/network.hpp"

using namespace prunekit;

struct pk_experiment {
    Experiment impl;
};

struct pk_model {
    Network net;
};

namespace {

thread_local std::string g_last_error;

pk_status fail(pk_status code, const char* message) {
    g_last_error = message;
    return code;
}

pk_status translate_current_exception() {
    try {
        throw;
    } catch (const ConfigError& e) {
        return fail(PK_ERR_CONFIG, e.what());
    } catch (const DataError& e) {
        return fail(PK_ERR_DATA, e.what());
    } catch (const NumericError& e) {
        return fail(PK_ERR_NUMERIC, e.what());
    } catch (const UsageError& e) {
        return fail(PK_ERR_USAGE, e.what());
    } catch (const std::exception& e) {
        return fail(PK_ERR_USAGE, e.what());
    } catch (...) {
        return fail(PK_ERR_USAGE, "unknown error");
    }
}

template <class F>
pk_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return PK_OK;
    } catch (...) {
        return translate_current_exception();
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

extern "C" {

const char* pk_version(void) { return "1.0.0"; }

const char* pk_last_error(void) { return g_last_error.c_str(); }

void pk_free(void* p) { std::free(p); }

pk_status pk_experiment_create_from_file(const char* config_path, pk_experiment** out) {
    if (!config_path || !out) return fail(PK_ERR_USAGE, "null argument");
    *out = nullptr;
    return guarded([&] {
        *out = new pk_experiment{Experiment(ExperimentConfig::from_file(config_path))};
    });
}

pk_status pk_experiment_create_from_json(const char* config_json, pk_experiment** out) {
    if (!config_json || !out) return fail(PK_ERR_USAGE, "null argument");
    *out = nullptr;
    return guarded([&] {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(config_json);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        *out = new pk_experiment{Experiment(ExperimentConfig::from_json(j))};
    });
}

pk_status pk_experiment_set_seed(pk_experiment* exp, uint64_t seed) {
    if (!exp) return fail(PK_ERR_USAGE, "null experiment handle");
    exp->impl.set_seed(seed);
    g_last_error.clear();
    return PK_OK;
}

pk_status pk_experiment_set_output_dir(pk_experiment* exp, const char* dir) {
    if (!exp || !dir) return fail(PK_ERR_USAGE, "null argument");
    exp->impl.set_output_dir(dir);
    g_last_error.clear();
    return PK_OK;
}

pk_status pk_experiment_set_force(pk_experiment* exp, int force) {
    if (!exp) return fail(PK_ERR_USAGE, "null experiment handle");
    exp->impl.set_force(force != 0);
    g_last_error.clear();
    return PK_OK;
}

pk_status pk_experiment_run(pk_experiment* exp, const char* command) {
    if (!exp || !command) return fail(PK_ERR_USAGE, "null argument");
    return guarded([&] { exp->impl.run(command); });
}

void pk_experiment_destroy(pk_experiment* exp) { delete exp; }

pk_status pk_model_load(const char* path, pk_model** out) {
    if (!path || !out) return fail(PK_ERR_USAGE, "null argument");
    *out = nullptr;
    return guarded([&] { *out = new pk_model{Network::load(path)}; });
}

pk_status pk_model_summary_json(const pk_model* model, char** out_json) {
    if (!model || !out_json) return fail(PK_ERR_USAGE, "null argument");
    *out_json = nullptr;
    return guarded([&] {
        const Network& net = model->net;
        nlohmann::json j;
        j["input_shape"] = net.input_shape;
        j["parameter_count"] = net.parameter_count();
        j["active_maps"] = net.active_maps();
        const FlopsTable ft = net.flops();
        j["total_flops"] = ft.total;
        nlohmann::json layers = nlohmann::json::array();
        for (size_t i = 0; i < net.layers.size(); ++i) {
            const Layer& l = net.layers[i];
            nlohmann::json lj;
            lj["index"] = i;
            lj["kind"] = layer_kind_name(l.kind);
            if (l.kind == LayerKind::Conv2d) {
                lj["in_channels"] = l.in_channels;
                lj["out_channels"] = l.out_channels;
                lj["kernel"] = l.kernel;
                lj["padding"] = l.padding;
                lj["per_map_flops"] = ft.neuron_flops(static_cast<int>(i));
            } else if (l.kind == LayerKind::Dense) {
                lj["in_features"] = l.in_features;
                lj["out_features"] = l.out_features;
            }
            layers.push_back(lj);
        }
        j["layers"] = layers;
        char* s = dup_string(j.dump());
        if (!s) throw std::bad_alloc();
        *out_json = s;
    });
}

pk_status pk_model_total_flops(const pk_model* model, double* out_flops) {
    if (!model || !out_flops) return fail(PK_ERR_USAGE, "null argument");
    return guarded([&] { *out_flops = model->net.flops().total; });
}

void pk_model_destroy(pk_model* model) { delete model; }

} // extern "C"
