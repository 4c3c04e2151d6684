from owvis.config import Config


def tiny_config(**kw) -> Config:
    base = dict(height=16, width=16, video_frames=4, max_objects=2, num_train_videos=3, num_eval_videos=2,
                ow_grid=3, n_cw_queries=3, model_dim=8, decoder_layers=2, n_text=2, o2t_layers=1,
                max_caption_len=6, batch_size=2, train_steps=3, precision="float64")
    base.update(kw)
    return Config(**base)
