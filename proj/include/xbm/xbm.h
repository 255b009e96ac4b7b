#ifndef XBM_XBM_H
#define XBM_XBM_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define XBM_API __attribute__((visibility("default")))
#else
#define XBM_API
#endif

/* Status codes. The non-zero values double as process exit codes. */
typedef enum xbm_status {
  XBM_OK = 0,
  XBM_ERR_INTERNAL = 1,
  XBM_ERR_CONFIG = 2,   /* bad or missing config key, bad argument */
  XBM_ERR_DATA = 3,     /* missing, unreadable or malformed files */
  XBM_ERR_NUMERIC = 4,  /* non-finite loss or gradient */
  XBM_ERR_CHECKSUM = 5  /* artifact does not match its manifest */
} xbm_status;

/* One command context: config, workspace root and flags. */
typedef struct xbm_session xbm_session;

typedef void (*xbm_log_fn)(const char* line, void* user);

XBM_API const char* xbm_version(void);
XBM_API const char* xbm_status_name(int status);

/* config_path may be NULL or "" for an empty config. On failure *out is NULL
   and the message is available through xbm_last_global_error(). */
XBM_API int xbm_session_create(const char* config_path, const char* output_root, xbm_session** out);
XBM_API void xbm_session_destroy(xbm_session* s);
XBM_API const char* xbm_last_global_error(void);

/* Message of the last failed call on this session ("" after success). */
XBM_API const char* xbm_session_last_error(const xbm_session* s);

XBM_API int xbm_session_set(xbm_session* s, const char* key, const char* value);
XBM_API int xbm_session_set_smoke(xbm_session* s, int enabled);
XBM_API int xbm_session_set_force(xbm_session* s, int enabled);
XBM_API int xbm_session_set_log(xbm_session* s, xbm_log_fn fn, void* user);

XBM_API int xbm_gen_data(xbm_session* s);
XBM_API int xbm_pretrain(xbm_session* s);
XBM_API int xbm_train_judges(xbm_session* s);
XBM_API int xbm_train_xbm(xbm_session* s);
XBM_API int xbm_eval(xbm_session* s);
XBM_API int xbm_explain(xbm_session* s, const char* split, int index);
XBM_API int xbm_intervene(xbm_session* s);
XBM_API int xbm_ablate(xbm_session* s);

#ifdef __cplusplus
}
#endif

#endif
