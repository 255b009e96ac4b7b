#include <exception>
#include <new>
#include <string>

#include "xbm/pipeline/pipeline.hpp"
#include "xbm/util/error.hpp"
#include "xbm/xbm.h"

struct xbm_session {
  xbm::pipeline::Settings settings;
  std::string error;
  xbm_log_fn log = nullptr;
  void* user = nullptr;
};

namespace {

thread_local std::string g_error;

int status_of(xbm::ErrorKind kind) {
  switch (kind) {
    case xbm::ErrorKind::config:
    case xbm::ErrorKind::invalid_argument:
      return XBM_ERR_CONFIG;
    case xbm::ErrorKind::data:
    case xbm::ErrorKind::io:
      return XBM_ERR_DATA;
    case xbm::ErrorKind::numeric:
      return XBM_ERR_NUMERIC;
    case xbm::ErrorKind::checksum:
      return XBM_ERR_CHECKSUM;
    default:
      return XBM_ERR_INTERNAL;
  }
}

template <class F>
int guarded(std::string& error, F&& f) {
  try {
    f();
    error.clear();
    return XBM_OK;
  } catch (const xbm::Error& e) {
    error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    error = "out of memory";
  } catch (const std::exception& e) {
    error = e.what();
  } catch (...) {
    error = "unknown error";
  }
  return XBM_ERR_INTERNAL;
}

int run(xbm_session* s, void (*cmd)(const xbm::pipeline::Settings&)) {
  if (!s) return XBM_ERR_CONFIG;
  return guarded(s->error, [&] { cmd(s->settings); });
}

}  // namespace

extern "C" {

const char* xbm_version(void) { return "0.1.0"; }

const char* xbm_status_name(int status) {
  switch (status) {
    case XBM_OK: return "ok";
    case XBM_ERR_INTERNAL: return "internal";
    case XBM_ERR_CONFIG: return "config";
    case XBM_ERR_DATA: return "data";
    case XBM_ERR_NUMERIC: return "numeric";
    case XBM_ERR_CHECKSUM: return "checksum";
    default: return "unknown";
  }
}

int xbm_session_create(const char* config_path, const char* output_root, xbm_session** out) {
  if (!out) return XBM_ERR_CONFIG;
  *out = nullptr;
  if (!output_root || !*output_root) {
    g_error = "output root is required";
    return XBM_ERR_CONFIG;
  }
  auto* s = new (std::nothrow) xbm_session;
  if (!s) {
    g_error = "out of memory";
    return XBM_ERR_INTERNAL;
  }
  const int rc = guarded(g_error, [&] {
    s->settings = xbm::pipeline::load_settings(config_path ? config_path : "", output_root);
  });
  if (rc != XBM_OK) {
    delete s;
    return rc;
  }
  *out = s;
  return XBM_OK;
}

void xbm_session_destroy(xbm_session* s) { delete s; }

const char* xbm_last_global_error(void) { return g_error.c_str(); }

const char* xbm_session_last_error(const xbm_session* s) { return s ? s->error.c_str() : "null session"; }

int xbm_session_set(xbm_session* s, const char* key, const char* value) {
  if (!s) return XBM_ERR_CONFIG;
  if (!key || !value) {
    s->error = "key and value are required";
    return XBM_ERR_CONFIG;
  }
  return guarded(s->error, [&] { xbm::pipeline::set_override(s->settings, key, value); });
}

int xbm_session_set_smoke(xbm_session* s, int enabled) {
  if (!s) return XBM_ERR_CONFIG;
  s->settings.smoke = enabled != 0;
  return XBM_OK;
}

int xbm_session_set_force(xbm_session* s, int enabled) {
  if (!s) return XBM_ERR_CONFIG;
  s->settings.force = enabled != 0;
  return XBM_OK;
}

int xbm_session_set_log(xbm_session* s, xbm_log_fn fn, void* user) {
  if (!s) return XBM_ERR_CONFIG;
  s->log = fn;
  s->user = user;
  if (fn)
    s->settings.log = [s](const std::string& line) { s->log(line.c_str(), s->user); };
  else
    s->settings.log = nullptr;
  return XBM_OK;
}

int xbm_gen_data(xbm_session* s) { return run(s, xbm::pipeline::gen_data); }
int xbm_pretrain(xbm_session* s) { return run(s, xbm::pipeline::pretrain); }
int xbm_train_judges(xbm_session* s) { return run(s, xbm::pipeline::train_judges); }
int xbm_train_xbm(xbm_session* s) { return run(s, xbm::pipeline::train_xbm); }
int xbm_eval(xbm_session* s) { return run(s, xbm::pipeline::eval); }
int xbm_intervene(xbm_session* s) { return run(s, xbm::pipeline::intervene); }
int xbm_ablate(xbm_session* s) { return run(s, xbm::pipeline::ablate); }

int xbm_explain(xbm_session* s, const char* split, int index) {
  if (!s) return XBM_ERR_CONFIG;
  return guarded(s->error, [&] { xbm::pipeline::explain(s->settings, split ? split : "test", index); });
}

}  // extern "C"
