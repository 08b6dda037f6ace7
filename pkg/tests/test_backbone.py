import numpy as np
import pytest

from spectrack import autodiff as ad
from spectrack import backbone as bb
from spectrack.errors import ConfigError, ContractError, DimensionError
from spectrack.events import Patch
from spectrack.nn import AffineParams


def tiny_config(**kw):
    base = dict(
        d_model=8, heads=2, mlp_ratio=2,
        template_side=32, search_side=64, event_bins=2,
        spectral_filters=2, spectral_router_hidden=8,
        wavelet_filters=2, wavelet_router_hidden=8,
    )
    base.update(kw)
    return bb.TrackConfig(**base)


def tiny_patches(rng, config):
    return (
        Patch(rng.normal(size=(3, config.template_side, config.template_side)), "template", "rgb"),
        Patch(rng.normal(size=(config.event_bins, config.ev_template_side, config.ev_template_side)), "template", "event"),
        Patch(rng.normal(size=(3, config.search_side, config.search_side)), "search", "rgb"),
        Patch(rng.normal(size=(config.event_bins, config.ev_search_side, config.ev_search_side)), "search", "event"),
    )


class TestConfig:
    def test_default_geometry(self):
        c = bb.TrackConfig()
        assert (c.template_grid, c.search_grid) == (4, 8)
        assert (c.n_template, c.n_search) == (16, 64)
        assert c.seq_len == 160
        assert (c.ev_template_side, c.ev_search_side) == (16, 32)
        assert c.n_event_tokens == 80
        assert c.coeff_max == 40

    def test_tiny_geometry(self):
        c = tiny_config()
        assert c.seq_len == 40
        assert (c.n_template, c.n_search) == (4, 16)

    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(heads=3)
        with pytest.raises(ConfigError):
            tiny_config(set_layers=13)
        with pytest.raises(ConfigError):
            tiny_config(wer_mode="always")
        with pytest.raises(ConfigError):
            tiny_config(ev_patch=5)
        with pytest.raises(ConfigError):
            tiny_config(template_side=30)
        with pytest.raises(ConfigError):
            tiny_config(event_bins=0)
        with pytest.raises(ConfigError):
            tiny_config(search_context=0.0)

    def test_json_round_trip(self, tmp_path):
        c = tiny_config(wer_mode="input_only", set_layers=3)
        path = c.to_json(tmp_path / "cfg.json")
        assert bb.TrackConfig.from_json(path) == c


class TestTokenisation:
    def test_patch_tokens_match_the_loop_oracle(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(2, 8, 8))
        tokens = bb.patch_tokens(Patch(data, "template", "event"), 4).data
        g, p = 2, 4
        want = np.zeros((g * g, 2 * p * p))
        for gy in range(g):
            for gx in range(g):
                vec = []
                for c in range(2):
                    for py in range(p):
                        for px in range(p):
                            vec.append(data[c, gy * p + py, gx * p + px])
                want[gy * g + gx] = vec
        assert np.array_equal(tokens, want)

    def test_patch_side_must_divide(self):
        with pytest.raises(DimensionError):
            bb.patch_tokens(Patch(np.zeros((1, 6, 6)), "template", "rgb"), 4)

    def test_projection_adds_shared_positions(self):
        rng = np.random.default_rng(5)
        patch = Patch(rng.normal(size=(1, 8, 8)), "template", "event")
        proj = AffineParams.init(rng, 16, 4)
        pos = ad.tensor(rng.normal(size=(4, 4)))
        with_pos = bb.project_tokens(patch, proj, 4, pos).data
        without = bb.project_tokens(patch, proj, 4, None).data
        np.testing.assert_allclose(with_pos, without + pos.data, atol=1e-15)

    def test_projection_width_mismatch(self):
        rng = np.random.default_rng(5)
        patch = Patch(np.zeros((1, 8, 8)), "template", "event")
        with pytest.raises(DimensionError):
            bb.project_tokens(patch, AffineParams.init(rng, 9, 4), 4, None)
        with pytest.raises(DimensionError):
            bb.project_tokens(patch, AffineParams.init(rng, 16, 4), 4, ad.tensor(np.zeros((5, 4))))


class TestLayers:
    def test_zeroed_residual_branches_pass_tokens_through_bitwise(self):
        rng = np.random.default_rng(7)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng, identity=True)
        h = rng.normal(size=(config.seq_len, config.d_model))
        out_std = bb.std_layer(ad.tensor(h), params.layers[config.set_layers])
        assert np.array_equal(out_std.data, h)
        out_set = bb.set_layer(ad.tensor(h), params.layers[0])
        assert np.array_equal(out_set.data, h)

    def test_set_layer_requires_a_filter_bank(self):
        rng = np.random.default_rng(9)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng)
        plain = params.layers[config.set_layers]
        with pytest.raises(ContractError):
            bb.set_layer(ad.tensor(np.zeros((config.seq_len, config.d_model))), plain)

    def test_layer_flags(self):
        rng = np.random.default_rng(11)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng)
        assert all(l.has_dff for l in params.layers[: config.set_layers])
        assert not any(l.has_dff for l in params.layers[config.set_layers :])


class TestAssemblyAndForward:
    def test_assembled_order_and_event_refinement(self):
        rng = np.random.default_rng(13)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng, identity=True)
        nt, ns, d = config.n_template, config.n_search, config.d_model
        rgb_t = ad.tensor(rng.normal(size=(nt, d)))
        ev_t = ad.tensor(rng.normal(size=(nt, d)))
        rgb_s = ad.tensor(rng.normal(size=(ns, d)))
        ev_s = ad.tensor(rng.normal(size=(ns, d)))
        h = bb.assemble(rgb_t, ev_t, rgb_s, ev_s, params.wer_input).data
        slices = bb.token_slices(config)
        assert np.array_equal(h[slice(*slices["rgb_t"])], rgb_t.data)
        assert np.array_equal(h[slice(*slices["rgb_s"])], rgb_s.data)
        # identity refinement is a wavelet round trip, exact only to rounding
        assert np.abs(h[slice(*slices["ev_t"])] - ev_t.data).max() < 1e-9
        assert np.abs(h[slice(*slices["ev_s"])] - ev_s.data).max() < 1e-9

    def test_token_count_mismatch_raises(self):
        rng = np.random.default_rng(15)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng, identity=True)
        with pytest.raises(DimensionError):
            bb.assemble(
                ad.tensor(rng.normal(size=(4, 8))),
                ad.tensor(rng.normal(size=(5, 8))),
                ad.tensor(rng.normal(size=(16, 8))),
                ad.tensor(rng.normal(size=(16, 8))),
                params.wer_input,
            )

    def test_identity_initialisation_reproduces_the_assembled_sequence(self):
        rng = np.random.default_rng(17)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng, identity=True)
        patches = tiny_patches(rng, config)
        h, feature = bb.forward_backbone(*patches, params, config)

        rgb_t = bb.project_tokens(patches[0], params.proj_rgb_t, config.rgb_patch, params.pos_template)
        ev_t = bb.project_tokens(patches[1], params.proj_ev_t, config.ev_patch, params.pos_template)
        rgb_s = bb.project_tokens(patches[2], params.proj_rgb_s, config.rgb_patch, params.pos_search)
        ev_s = bb.project_tokens(patches[3], params.proj_ev_s, config.ev_patch, params.pos_search)
        h0 = bb.assemble(rgb_t, ev_t, rgb_s, ev_s, params.wer_input).data
        assert np.abs(h.data - h0).max() < 1e-9

        g = config.search_grid
        slices = bb.token_slices(config)
        fused = 0.5 * (h.data[slice(*slices["rgb_s"])] + h.data[slice(*slices["ev_s"])])
        assert np.abs(feature.data - fused.reshape(g, g, config.d_model)).max() < 1e-12

    def test_forward_shapes_and_wer_modes(self):
        rng = np.random.default_rng(19)
        for mode in bb.WER_MODES:
            config = tiny_config(wer_mode=mode, depth=4, set_layers=2)
            params = bb.init_backbone_params(config, rng)
            assert len(params.wer_layers) == (2 if mode == "per_layer" else 0)
            h, feature = bb.forward_backbone(*tiny_patches(rng, config), params, config)
            assert h.shape == (config.seq_len, config.d_model)
            assert feature.shape == (config.search_grid, config.search_grid, config.d_model)

    def test_patch_labels_and_sides_are_checked(self):
        rng = np.random.default_rng(21)
        config = tiny_config()
        params = bb.init_backbone_params(config, rng, identity=True)
        t_rgb, t_ev, s_rgb, s_ev = tiny_patches(rng, config)
        with pytest.raises(ContractError):
            bb.forward_backbone(s_rgb, t_ev, t_rgb, s_ev, params, config)
        bad = Patch(np.zeros((3, 16, 16)), "template", "rgb")
        with pytest.raises(DimensionError):
            bb.forward_backbone(bad, t_ev, s_rgb, s_ev, params, config)

    def test_stacked_layers_change_tokens_when_not_identity(self):
        rng = np.random.default_rng(23)
        config = tiny_config(depth=2, set_layers=1)
        params = bb.init_backbone_params(config, rng)
        patches = tiny_patches(rng, config)
        h, _ = bb.forward_backbone(*patches, params, config)
        params_id = bb.init_backbone_params(config, np.random.default_rng(23), identity=True)
        h_id, _ = bb.forward_backbone(*patches, params_id, config)
        assert np.abs(h.data - h_id.data).max() > 1e-3
